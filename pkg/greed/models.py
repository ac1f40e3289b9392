from greed import db


class Artifact(db.Model):
    __tablename__ = 'artifacts'
    id = db.Column(db.Integer, primary_key=True, autoincrement=True)
    path = db.Column(db.String)
    kind = db.Column(db.String)
    sha256 = db.Column(db.String)

    run_id = db.Column(db.Integer, db.ForeignKey('runs.id'))


class Metric(db.Model):
    __tablename__ = 'metrics'
    id = db.Column(db.Integer, primary_key=True, autoincrement=True)
    metric = db.Column(db.String)
    dataset_type = db.Column(db.String)
    k = db.Column(db.Integer)
    value = db.Column(db.Float)

    run_id = db.Column(db.Integer, db.ForeignKey('runs.id'))


class Run(db.Model):
    __tablename__ = 'runs'
    id = db.Column(db.Integer, primary_key=True, autoincrement=True)
    stage = db.Column(db.String)
    seed = db.Column(db.Integer)
    status = db.Column(db.String)
    config_text = db.Column(db.Text)
    message = db.Column(db.String)
    start_date = db.Column(db.DateTime)
    end_date = db.Column(db.DateTime)

    artifacts = db.relationship(Artifact, backref='run')
    metrics = db.relationship(Metric, backref='run')
