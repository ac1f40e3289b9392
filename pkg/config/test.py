from . import BaseConfig


class Config(BaseConfig):
    TESTING = True

    SQLALCHEMY_DATABASE_URI = 'sqlite://'
    LOG_LEVEL = 'ERROR'

    # Small enough for desk-scale runs inside the test suite
    NUM_WALKS = 10
    WALK_LENGTH = 20
    SKIPGRAM_DIM = 16
    SKIPGRAM_WINDOW = 5
    SKIPGRAM_EPOCHS = 2
    INPUT_DIM = 16
    HIDDEN_DIMS = (32, 32)
    EPOCHS = 5
