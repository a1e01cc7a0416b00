from django_vpred.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Compare guided trajectories formed in v-space and eps-space.'
    experiment = 'cfg_check'
