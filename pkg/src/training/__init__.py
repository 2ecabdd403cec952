"""損失と学習ループ"""
