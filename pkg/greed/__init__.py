import logging
import os

from flask import Flask
from flask_sqlalchemy import SQLAlchemy

app = Flask(__name__)
# Default to development configuration
app_settings = os.getenv('APP_SETTINGS', 'config.dev.Config')
app.config.from_object(app_settings)

app.logger.setLevel(app.config['LOG_LEVEL'])
if app.config.get('LOGFILE'):
    file_handler = logging.FileHandler(app.config['LOGFILE'])
    file_handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(module)s: %(message)s'))
    app.logger.addHandler(file_handler)

db = SQLAlchemy(app)

# Must go last to avoid circular imports
from greed import models
from greed import cli
