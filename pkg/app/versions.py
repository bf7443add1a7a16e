APP_NAME = "meshfree-quadrature"
APP_VERSION = "1.0.0"
CSV_SCHEMA_VERSION = 1
