# Empty __init__.py for core package
