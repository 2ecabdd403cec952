"""IoU・AP による評価"""
