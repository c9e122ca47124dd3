"""Shared plumbing of the dgf management commands: flag validation and exit codes.

Exit codes: 0 success, 1 failed check (gradcheck or training criterion),
2 bad flags or unreadable/unwritable files, 3 shape, channel or
degenerate-window errors.
"""

import contextlib

from django.core.management.base import BaseCommand, CommandError

from dgf.errors import DegenerateWindowError, DgfError, InvalidArgument, StorageError

EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_MISMATCH = 3


class FormCommand(BaseCommand):
    """A command whose options are validated by a Django form before handling."""

    form_class = None

    def validated(self, options) -> dict:
        data = {name: options.get(name) for name in self.form_class.base_fields}
        form = self.form_class(data=data)
        if not form.is_valid():
            problems = '; '.join(
                f'--{field.replace("_", "-")}: {" ".join(errors)}' for field, errors in form.errors.items()
            )
            raise CommandError(problems, returncode=EXIT_USAGE)
        return form.cleaned_data


@contextlib.contextmanager
def command_errors():
    """Translate library errors into CommandError with the matching exit code."""
    try:
        yield
    except StorageError as exc:
        raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
    except (InvalidArgument, DegenerateWindowError) as exc:
        raise CommandError(str(exc), returncode=EXIT_MISMATCH) from exc
    except DgfError as exc:
        raise CommandError(str(exc), returncode=EXIT_FAILED) from exc
