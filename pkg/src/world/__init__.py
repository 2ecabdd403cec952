"""合成エゴセントリック世界

手・物体・カメラ窓のドリフトと接触イベントを持つクリップ、およびオラクル検出器。
"""
