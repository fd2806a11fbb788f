from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from discretization.dg import export_system


class Command(BaseCommand):
    help = "Write A_h, A0 and the load vector of a level to MatrixMarket files."

    def add_arguments(self, parser):
        parser.add_argument('--level', type=int, required=True, help="Mesh level, h = 2^-level")
        parser.add_argument('--dir', type=Path, dest='directory', help="Output directory (default EXPORT_DIR)")

    def handle(self, *args, **options):
        directory = options['directory'] or Path(settings.EXPORT_DIR)
        try:
            paths = export_system(
                options['level'], directory, eta=settings.PENALTY_ETA, eta0=settings.PENALTY_ETA0
            )
        except ValueError as exc:
            raise CommandError(str(exc)) from exc
        for name, path in paths.items():
            self.stdout.write(f"→ {name}: {path}")
        self.stdout.write(self.style.SUCCESS(f"Exported level {options['level']} to {directory}"))
