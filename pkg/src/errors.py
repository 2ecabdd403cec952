"""例外定義

CLI の終了コードと対応する例外階層。
"""


class AnactoError(Exception):
    """本ツールの基底例外"""
    exit_code = 1


class UsageError(AnactoError):
    """引数・設定の誤り（終了コード 1）"""
    exit_code = 1


class DataError(AnactoError):
    """入力データの不足・不整合（終了コード 2）"""
    exit_code = 2


class NumericError(AnactoError):
    """NaN/Inf の発生など数値計算の失敗（終了コード 3）"""
    exit_code = 3


class GradientError(NumericError):
    """テープの誤用（非スカラー損失、追跡されていないパラメータ）"""
