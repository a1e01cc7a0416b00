#!/usr/bin/env -S python -Wall
"""
Run the suite with Django's test runner and ``tests.settings``.

    ./runtests.py                          # everything
    ./runtests.py tests.test_precision     # one module
"""
import os
import sys

import django
from django.conf import settings
from django.test.utils import get_runner


def run_tests(*test_labels):
    if not test_labels:
        test_labels = ['tests']

    os.environ['DJANGO_SETTINGS_MODULE'] = 'tests.settings'
    django.setup()
    TestRunner = get_runner(settings)
    test_runner = TestRunner()
    failures = test_runner.run_tests(test_labels)
    sys.exit(bool(failures))


if __name__ == '__main__':
    run_tests(*sys.argv[1:])
