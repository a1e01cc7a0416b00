from django_vpred.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Generate token grids over a guidance sweep and score them against the true distribution.'
    experiment = 'sample_eval'
