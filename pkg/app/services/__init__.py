# Empty __init__.py for services package
