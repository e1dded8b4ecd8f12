import argparse
import importlib
import inspect
import os
import sys


ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
PACKAGE = 'apsgdlib'


def module_name_from_path(path):
    relpath = os.path.relpath(path, ROOT)
    return relpath.replace('.py', '').replace(os.sep, '.')


def render_signature(executable, class_name=None):
    arg_list = []
    for key, value in inspect.signature(executable).parameters.items():
        if value.kind == value.VAR_POSITIONAL:
            arg_list.append(f'*{key}')
        elif value.kind == value.VAR_KEYWORD:
            arg_list.append(f'**{key}')
        elif value.default is value.empty:
            arg_list.append(key)
        else:
            arg_list.append(f'{key}={value.default!r}')
    owner = f'{class_name}.' if class_name else ''
    path = f'{executable.__module__}.{owner}{executable.__name__}'
    content = f'```python\n# {path}\n'
    content += f'{executable.__name__}({", ".join(arg_list)})\n```\n'
    if (docstring := inspect.getdoc(executable)):
        content += f'\n```\n{docstring}\n```\n\n'
    return content


def is_excluded(obj):
    try:
        return '# wiki: ignore' in inspect.getsource(obj)
    except (OSError, TypeError):
        return True


def render_class(class_name, cls):
    content = f'## {class_name}\n\n'
    if (docstring := inspect.getdoc(cls)):
        content += f'```\n{docstring}\n```\n\n'
    for name, obj in inspect.getmembers(cls):
        if name.startswith('_') or \
                not (inspect.ismethod(obj) or inspect.isfunction(obj)):
            continue
        # Dataclass helpers inherited from elsewhere are skipped.
        if obj.__module__ != cls.__module__:
            continue
        content += f'### {name}\n\n'
        content += render_signature(obj, class_name=class_name)
    return content


def render_module(module_name):
    module = importlib.import_module(module_name)
    content = ''
    if (docstring := inspect.getdoc(module)):
        content += f'{docstring}\n\n'
    for class_name, cls in inspect.getmembers(module, inspect.isclass):
        if cls.__module__ != module_name or is_excluded(cls):
            continue
        content += render_class(class_name, cls)
    for name, obj in inspect.getmembers(module, inspect.isfunction):
        if obj.__module__ != module_name or is_excluded(obj):
            continue
        content += f'## {name}\n\n'
        content += render_signature(obj)
    return content


def reset_directory(path):
    if not os.path.exists(path):
        os.makedirs(path)
        return
    for filename in os.listdir(path):
        if filename.endswith('.md'):
            os.remove(os.path.join(path, filename))


def main():
    parser = argparse.ArgumentParser(
        description=f'Render the {PACKAGE} API as markdown pages.')
    parser.add_argument('output_dir')
    args = parser.parse_args()

    if ROOT not in sys.path:
        sys.path.append(ROOT)
    docs_root = os.path.join(ROOT, args.output_dir)
    reset_directory(docs_root)

    pages = []
    for dirpath, _, filenames in os.walk(os.path.join(ROOT, PACKAGE)):
        for filename in sorted(filenames):
            if filename.startswith('_') or not filename.endswith('.py'):
                continue
            module_name = module_name_from_path(os.path.join(dirpath,
                                                             filename))
            content = render_module(module_name)
            if not content:
                continue
            with open(os.path.join(docs_root, f'{module_name}.md'),
                      'w') as outfile:
                outfile.write(content)
            pages.append(module_name)

    index = ''.join(f'* [{name}]({name})\n' for name in sorted(pages))
    with open(os.path.join(docs_root, 'Home.md'), 'w') as outfile:
        outfile.write(f'# {PACKAGE}\n\n{index}')


if __name__ == '__main__':
    main()
