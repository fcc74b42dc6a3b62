from .app import app, create_app, handle_eval, handle_oracle, handle_trace, handle_train

__all__ = ["app", "create_app", "handle_eval", "handle_oracle", "handle_trace", "handle_train"]
