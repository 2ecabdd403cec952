"""ユーティリティモジュール

共通機能を提供する。
"""
