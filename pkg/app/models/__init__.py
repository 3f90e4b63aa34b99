# Empty __init__.py for models package
