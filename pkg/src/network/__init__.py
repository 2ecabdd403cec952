"""T-ANACTO モデルとベースライン

エンコーダ（パッチ埋め込み + [cls] + 検出融合）、因果デコーダ、回帰ヘッド、注意マップ。
"""
