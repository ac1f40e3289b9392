class BaseConfig:
    SECRET_KEY = 'development key'
    SQLALCHEMY_TRACK_MODIFICATIONS = False
    LOGFILE = None
    LOG_LEVEL = 'WARNING'

    # Root seed; every stage derives its own seed from it
    SEED = 0
    THREADS = 1

    # Link-prediction split
    TEST_FRACTION = 0.20
    VALIDATION_FRACTION = 0.10
    NEGATIVE_RETRIES = 100

    # Random walks
    NUM_WALKS = 40
    WALK_LENGTH = 40
    MAX_HOP = 3
    BFS_PAIR_LIMIT = 10000

    # Skip-gram proximity embeddings
    SKIPGRAM_DIM = 128
    SKIPGRAM_WINDOW = 10
    SKIPGRAM_NEGATIVES = 5
    SKIPGRAM_EPOCHS = 1
    SKIPGRAM_LEARNING_RATE = 0.025
    SKIPGRAM_BATCH_SIZE = 1024

    # Siamese direction model
    INPUT_DIM = 64
    HIDDEN_DIMS = (256, 256)
    EMBED_DIM = 3
    MARGIN = 0.25
    THRESHOLD = 0.5
    LEARNING_RATE = 0.025
    BATCH_SIZE = 512
    EPOCHS = 20

    # Evaluation
    TOP_K = (10, 20, 50)
    SAMPLE_FRACTION = 0.10

    @staticmethod
    def init_app(app):
        pass
