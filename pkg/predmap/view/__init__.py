""" Plain-text presentation of run results """
