"""次に触れる物体の予測ツール

エゴセントリック映像から、行動開始時に接触する物体のバウンディングボックスを予測する。
"""
__version__ = '1.0.0'
