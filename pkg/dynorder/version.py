import importlib_metadata


def package_version(package_name):
    try:
        return importlib_metadata.version(package_name)
    except importlib_metadata.PackageNotFoundError:
        return 'unknown'


def numpy_version():
    return package_version('numpy')


def dynorder_version():
    return package_version('dynorder')


def version():
    return 'dynorder {} (numpy {})'.format(dynorder_version(), numpy_version())
