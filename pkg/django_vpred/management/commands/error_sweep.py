from django_vpred.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Tabulate predicted and measured low-precision sampling error per step and parameterization.'
    experiment = 'error_sweep'
