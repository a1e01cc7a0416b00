from django_vpred.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Train standalone diffusion heads, one per parameterization, from identical seeds.'
    experiment = 'train_head'
