"""アノテーション整形とフレームサンプリング"""
