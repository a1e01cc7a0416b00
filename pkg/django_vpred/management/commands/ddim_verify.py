from django_vpred.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Check the general DDIM step against the textbook updates and write a JSON report.'
    experiment = 'ddim_verify'
