import argparse
import logging
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
from flask import Flask, jsonify, request
from flask_cors import CORS
from werkzeug.exceptions import HTTPException
from werkzeug.serving import make_server

from config_loader import get_service_config
from core.errors import PreconditionError, ServiceError
from core.nn import Model, embed, forward, load_model
from service.ledger import QueryLedger
from service.target import ServiceConfig

logger = logging.getLogger(__name__)


class WireError(Exception):
    """An error answered to the caller as {"error", "message", "remaining_budget"}"""

    def __init__(self, status: int, code: str, message: str, remaining_budget: Optional[int] = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.remaining_budget = remaining_budget


def _error_body(code: str, message: str, remaining_budget: Optional[int] = None):
    body = {"error": code, "message": message}
    if remaining_budget is not None:
        body["remaining_budget"] = remaining_budget
    return jsonify(body)


def create_app(config: ServiceConfig, model: Optional[Model] = None, ledger: Optional[QueryLedger] = None) -> Flask:
    """Flask app serving one target model behind black-box endpoints"""
    if model is None:
        model, _ = load_model(config.artifact_path)
    if config.expose_embedding and model.n_layers < 3:
        raise PreconditionError("an embedding endpoint needs a model with a hidden layer")
    ledger = ledger or QueryLedger(config.query_budget)

    app = Flask(__name__)
    CORS(app)
    app.config["ledger"] = ledger

    @app.errorhandler(WireError)
    def handle_wire_error(e: WireError):
        logger.warning("refused request on %s: %s %s", request.path, e.code, e.message)
        return _error_body(e.code, e.message, e.remaining_budget), e.status

    @app.errorhandler(HTTPException)
    def handle_http_error(e: HTTPException):
        code = "not_found" if e.code == 404 else "bad_request"
        return _error_body(code, e.description or e.name), e.code

    @app.errorhandler(Exception)
    def handle_exception(e):
        logger.error(f"Server Error: {str(e)}", exc_info=True)
        return _error_body("internal_error", str(e)), 500

    def _read_rows() -> np.ndarray:
        data = request.get_json(silent=True)
        if not data or "inputs" not in data:
            raise WireError(400, "bad_request", "Missing JSON body with an 'inputs' matrix")
        try:
            rows = np.asarray(data["inputs"], dtype=np.float64)
        except (TypeError, ValueError):
            raise WireError(400, "bad_request", "'inputs' must be a matrix of numbers")
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise WireError(400, "bad_request", f"'inputs' must be a non-empty matrix, got shape {list(rows.shape)}")
        if rows.shape[1] != model.input_width:
            raise WireError(400, "dimension_mismatch",
                            f"rows have width {rows.shape[1]}, the service expects {model.input_width}")
        if rows.shape[0] > config.max_batch_rows:
            raise WireError(400, "bad_request", f"at most {config.max_batch_rows} rows per request")
        return rows

    def _charge(rows: np.ndarray, endpoint: str):
        if not ledger.admit(rows.shape[0], endpoint):
            raise WireError(429, "budget_exhausted",
                            f"batch of {rows.shape[0]} rows exceeds the remaining query budget",
                            ledger.remaining)

    def _respond(key: str, values: np.ndarray):
        body = {key: values.tolist()}
        if ledger.remaining is not None:
            body["remaining_budget"] = ledger.remaining
        return jsonify(body)

    @app.route("/predict", methods=["POST"])
    def predict():
        rows = _read_rows()
        _charge(rows, "predict")
        return _respond("posteriors", forward(model, rows).posteriors)

    @app.route("/embedding", methods=["POST"])
    def embedding():
        if not config.expose_embedding:
            raise WireError(404, "not_found", "this service exposes no embedding endpoint")
        rows = _read_rows()
        _charge(rows, "embedding")
        return _respond("embeddings", embed(model, rows))

    @app.route("/health", methods=["GET"])
    def health():
        return jsonify({"status": "ok"})

    return app


@dataclass
class ServiceHandle:
    """A service running on a background thread"""
    app: Flask
    ledger: QueryLedger
    host: str
    port: int
    _server: object
    _thread: threading.Thread

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    @property
    def predict_url(self) -> str:
        return f"{self.base_url}/predict"

    @property
    def embedding_url(self) -> str:
        return f"{self.base_url}/embedding"

    def shutdown(self):
        self._server.shutdown()
        self._thread.join(timeout=5)


def serve(config: ServiceConfig, model: Optional[Model] = None) -> ServiceHandle:
    """Start the service on a daemon thread; port 0 binds a free port"""
    app = create_app(config, model)
    try:
        server = make_server(config.host, config.port, app, threaded=True)
    except OSError as e:
        raise ServiceError(f"cannot bind {config.host}:{config.port}: {e}") from e
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    handle = ServiceHandle(
        app=app,
        ledger=app.config["ledger"],
        host=config.host,
        port=server.server_port,
        _server=server,
        _thread=thread,
    )
    logger.info("target service for %s listening on %s", config.artifact_path, handle.base_url)
    return handle


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO)
    defaults = get_service_config()
    parser = argparse.ArgumentParser(description="Serve a target model behind black-box endpoints")
    parser.add_argument("artifact", help="Model artifact to serve")
    parser.add_argument("--host", default=defaults.get("host", "127.0.0.1"))
    parser.add_argument("--port", type=int, default=defaults.get("port", 5000))
    parser.add_argument("--budget", type=int, default=None, help="Query budget in input rows")
    parser.add_argument("--embedding", action="store_true", help="Expose the embedding endpoint")
    args = parser.parse_args()

    service_config = ServiceConfig(
        artifact_path=args.artifact,
        expose_embedding=args.embedding,
        query_budget=args.budget,
        host=args.host,
        port=args.port,
        max_batch_rows=defaults.get("max_batch_rows", 256),
    )
    app = create_app(service_config)
    app.run(host=args.host, port=args.port, debug=False, threaded=True)
