from functools import wraps
from typing import Any, Callable, TypeVar

from opentelemetry import trace

from stratah.config import settings

tracer = trace.get_tracer(__name__)

F = TypeVar("F", bound=Callable[..., Any])


def _is_tracing_enabled() -> bool:
    return settings.enable_tracing


def traced(operation_name: str, **static_attributes: Any) -> Callable[[F], F]:
    """
    Decorator to run a command inside an OpenTelemetry span.

    Fast path when tracing is disabled: the wrapped function is called
    directly. On failure the span status is ERROR and the exception is
    recorded before it propagates.
    """
    def decorator(func: F) -> F:
        @wraps(func)
        def wrapper(*args, **kwargs):
            if not _is_tracing_enabled():
                return func(*args, **kwargs)

            with tracer.start_as_current_span(
                f"stratah.{operation_name}",
                attributes={"stratah.operation": operation_name, **static_attributes},
            ) as span:
                try:
                    result = func(*args, **kwargs)
                    span.set_status(trace.Status(trace.StatusCode.OK))
                    return result
                except Exception as e:
                    span.set_status(trace.Status(trace.StatusCode.ERROR, str(e)))
                    span.record_exception(e)
                    raise
        return wrapper  # type: ignore[return-value]
    return decorator
