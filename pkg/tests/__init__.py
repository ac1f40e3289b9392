import os

# The registry engine is bound when greed is imported, so the test settings must come first
os.environ.setdefault('APP_SETTINGS', 'config.test.Config')
