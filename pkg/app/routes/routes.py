import click

from .bench_router import bench_commands


def include_routes(group: click.Group) -> click.Group:
    for command in bench_commands:
        group.add_command(command)
    return group
