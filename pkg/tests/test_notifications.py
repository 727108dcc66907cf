from unittest.mock import MagicMock

import pytest
import requests

from src.notifications import webhook_notifier
from src.notifications.webhook_notifier import RunNotifier

URL = "https://chat.example.test/hooks/bench"


@pytest.fixture
def post(monkeypatch):
    mock = MagicMock()
    monkeypatch.setattr(webhook_notifier.requests, "post", mock)
    return mock


def test_disabled_without_url(monkeypatch, post):
    monkeypatch.delenv("BENCH_WEBHOOK_URL", raising=False)
    notifier = RunNotifier()
    assert not notifier.enabled
    assert notifier.send_message("hello") is False
    post.assert_not_called()


def test_url_from_environment(monkeypatch):
    monkeypatch.setenv("BENCH_WEBHOOK_URL", URL)
    assert RunNotifier().webhook_url == URL


def test_run_finished_posts_content(post):
    assert RunNotifier(URL).run_finished("offline", "graetz-steady", "2 models") is True
    args, kwargs = post.call_args
    assert args == (URL,)
    assert kwargs["json"]["content"].endswith("offline graetz-steady: 2 models")
    assert kwargs["timeout"] == 10


def test_run_failed_mentions_error(post):
    RunNotifier(URL).run_failed("report", "square-steady", ValueError("no models"))
    assert "report square-steady failed: ValueError: no models" in post.call_args.kwargs["json"]["content"]


def test_http_error_is_swallowed(post):
    post.return_value.raise_for_status.side_effect = requests.HTTPError("502")
    assert RunNotifier(URL).send_message("hello") is False


def test_connection_error_is_swallowed(post):
    post.side_effect = requests.ConnectionError("unreachable")
    assert RunNotifier(URL).send_message("hello") is False


def test_long_message_cut_to_webhook_limit(post):
    assert RunNotifier(URL).send_message("e" * (webhook_notifier.MAX_CONTENT + 50)) is True
    content = post.call_args.kwargs["json"]["content"]
    assert len(content) == webhook_notifier.MAX_CONTENT
    assert content.endswith("…")


def test_custom_timeout(post):
    RunNotifier(URL, timeout=2.5).send_message("hello")
    assert post.call_args.kwargs["timeout"] == 2.5
