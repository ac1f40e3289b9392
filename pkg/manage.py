#!/usr/bin/env python

import os
import sys
import unittest

# The test suite runs against the in-memory registry, never the working one
if sys.argv[1:2] == ['test']:
    os.environ['APP_SETTINGS'] = 'config.test.Config'

from flask.cli import FlaskGroup

from greed import app


cli = FlaskGroup(create_app=lambda: app)


@app.cli.command('test')
def test():
    """Run the unit tests"""
    tests = unittest.TestLoader().discover('tests', top_level_dir='.')
    result = unittest.TextTestRunner(verbosity=2).run(tests)
    sys.exit(0 if result.wasSuccessful() else 1)


if __name__ == '__main__':
    cli()
