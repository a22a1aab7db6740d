"""Init file for siamtrack package"""
