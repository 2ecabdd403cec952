"""pytest 共通設定"""
import pytest


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="slow マーカーのテストも実行する")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="--runslow を指定したときだけ実行")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
