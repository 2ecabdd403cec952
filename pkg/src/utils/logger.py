"""ロガー設定

loguruを使用したロギング機能を提供する。標準出力は表やレポートの出力に使うため、
コンソールのログは標準エラーに出す。
"""
import sys
from pathlib import Path
from typing import Optional

from loguru import logger

from src.config import LoggingConfig

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
    "<level>{level: <8}</level> | "
    "<level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{line} | {message}"


def setup_logger(
    level: str = "INFO",
    log_file: Optional[str] = None,
    console: bool = True,
    format_str: Optional[str] = None
):
    """ロガーを設定する

    Args:
        level: ログレベル (DEBUG, INFO, WARNING, ERROR)
        log_file: ログファイルパス（Noneの場合はファイル出力なし）
        console: コンソールへの出力を有効にするか
        format_str: コンソールのログフォーマット文字列

    Returns:
        設定されたロガーインスタンス
    """
    # デフォルトハンドラを削除
    logger.remove()

    if console:
        logger.add(sys.stderr, level=level, format=format_str or CONSOLE_FORMAT, colorize=True)

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        logger.add(
            log_file,
            level=level,
            format=FILE_FORMAT,
            rotation="10 MB",
            retention="7 days",
            compression="zip",
            encoding="utf-8"
        )

    return logger


def configure_logging(config: LoggingConfig, level_override: Optional[str] = None):
    """LoggingConfig（と CLI の --log-level）からロガーを設定する"""
    level = (level_override or config.level).upper()
    return setup_logger(level=level, log_file=config.file, console=config.console)
