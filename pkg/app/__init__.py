# Empty __init__.py for app package
