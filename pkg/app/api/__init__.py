# Empty __init__.py for api package
