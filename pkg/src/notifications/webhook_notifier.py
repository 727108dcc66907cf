import os
import logging
import requests

logger = logging.getLogger(__name__)

# Chat webhooks reject longer "content" fields.
MAX_CONTENT = 2000


class RunNotifier:
    """
    Announces finished and failed ``offline``/``report`` runs on a chat webhook.

    Delivery is best effort: a missing URL or an unreachable endpoint is logged and the run
    carries on.
    """

    def __init__(self, webhook_url: str | None = None, timeout: float = 10.0):
        self.webhook_url = webhook_url or os.getenv("BENCH_WEBHOOK_URL")
        self.timeout = timeout
        if not self.webhook_url:
            logger.warning("BENCH_WEBHOOK_URL not set - run notifications disabled")

    @property
    def enabled(self) -> bool:
        return bool(self.webhook_url)

    def send_message(self, message: str) -> bool:
        """True when the webhook answered 2xx. Messages over MAX_CONTENT characters are cut."""
        if not self.webhook_url:
            return False
        if len(message) > MAX_CONTENT:
            message = message[:MAX_CONTENT - 1] + "…"
        try:
            response = requests.post(self.webhook_url, json={"content": message}, timeout=self.timeout)
            response.raise_for_status()
        except requests.RequestException as e:
            logger.error(f"Run notification not delivered: {e}")
            return False
        logger.info(f"Run notification delivered ({len(message)} chars)")
        return True

    def run_finished(self, command: str, problem: str, summary: str) -> bool:
        return self.send_message(f"✅ {command} {problem}: {summary}")

    def run_failed(self, command: str, problem: str, error: Exception) -> bool:
        return self.send_message(f"❌ {command} {problem} failed: {type(error).__name__}: {error}")
