"""数値計算基盤

テンソル・自動微分・ニューラル演算・SGD・チェックポイント。
"""
