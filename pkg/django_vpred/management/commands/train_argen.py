from django_vpred.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Two-stage masked autoregressive training of the conditioner and diffusion head.'
    experiment = 'train_argen'
