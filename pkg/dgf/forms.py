from pathlib import Path

from django import forms
from django.core.exceptions import ValidationError

from dgf.layer import BACKWARD_TERMS, Variant

IMAGE_SUFFIXES = ('.ppm', '.pgm', '.png')
TRAIN_TASKS = ('affine', 'smooth', 'gamma')


def parse_int_list(value: str, minimum: int) -> list[int]:
    """'512,1024' -> [512, 1024]; every item must be an integer >= minimum."""
    items = [item.strip() for item in str(value).split(',') if item.strip()]
    if not items:
        raise ValidationError('Give at least one value.', code='invalid')
    numbers = []
    for item in items:
        try:
            number = int(item)
        except ValueError:
            raise ValidationError(f'{item!r} is not an integer.', code='invalid') from None
        if number < minimum:
            raise ValidationError(f'{number} is below the minimum of {minimum}.', code='invalid')
        numbers.append(number)
    return numbers


class UpsampleForm(forms.Form):
    """
    Flags of the upsample command.

    Fields:
        - guide (str): Path of the high-resolution guide image.
        - low_res_output (str): Low-resolution output, an image or a raw tensor file.
        - radius (int): Window radius, >= 0.
        - eps (float): Regularizer, >= 0.
        - variant (str): 'joint' or 'highres'.
        - out (str): Path of the output image (.ppm, .pgm or .png).

    Methods:
        - clean_guide(), clean_low_res_output(): Require existing files.
        - clean_out(): Requires a supported image suffix.
    """

    guide = forms.CharField()
    low_res_output = forms.CharField()
    radius = forms.IntegerField(min_value=0)
    eps = forms.FloatField(min_value=0.0)
    variant = forms.ChoiceField(choices=[(v.value, v.value) for v in Variant])
    out = forms.CharField()

    def clean_guide(self):
        return self._existing_file('guide')

    def clean_low_res_output(self):
        return self._existing_file('low_res_output')

    def clean_out(self):
        out = self.cleaned_data.get('out')
        if Path(out).suffix.lower() not in IMAGE_SUFFIXES:
            self.add_error(
                'out',
                ValidationError(f'Output must end in one of {", ".join(IMAGE_SUFFIXES)}.', code='invalid'),
            )
        return out

    def _existing_file(self, field):
        path = self.cleaned_data.get(field)
        if not Path(path).is_file():
            self.add_error(field, ValidationError(f'No such file: {path}', code='invalid'))
        return path


class GradcheckForm(forms.Form):
    """Flags of the gradcheck command; corrupt names a backward term to negate."""

    seed = forms.IntegerField()
    tol = forms.FloatField()
    corrupt = forms.ChoiceField(choices=[(term, term) for term in BACKWARD_TERMS], required=False)

    def clean_tol(self):
        tol = self.cleaned_data.get('tol')
        if tol is not None and tol <= 0:
            self.add_error('tol', ValidationError('Tolerance must be positive.', code='invalid'))
        return tol

    def clean_corrupt(self):
        return self.cleaned_data.get('corrupt') or None


class BenchForm(forms.Form):
    sizes = forms.CharField()
    radii = forms.CharField()
    repeat = forms.IntegerField(min_value=1)

    def clean_sizes(self):
        return parse_int_list(self.cleaned_data.get('sizes'), minimum=1)

    def clean_radii(self):
        return parse_int_list(self.cleaned_data.get('radii'), minimum=0)


class TrainToyForm(forms.Form):
    """
    Flags of the train_toy command.

    Fields:
        - task (str): Synthetic operator to learn.
        - steps (int): Adam steps, >= 0.
        - lr (float): Learning rate, >= 0.
        - seed (int): Seed of the dataset, the initial weights and the sample order.
        - checkpoint (str): Where the trained parameters go; the loss CSV goes next to it.
        - samples, size (int): Dataset size and image side.
    """

    task = forms.ChoiceField(choices=[(task, task) for task in TRAIN_TASKS])
    steps = forms.IntegerField(min_value=0)
    lr = forms.FloatField(min_value=0.0)
    seed = forms.IntegerField()
    checkpoint = forms.CharField()
    samples = forms.IntegerField(min_value=1)
    size = forms.IntegerField(min_value=1)

    def clean_checkpoint(self):
        checkpoint = self.cleaned_data.get('checkpoint')
        parent = Path(checkpoint).parent
        if not parent.is_dir():
            self.add_error('checkpoint', ValidationError(f'No such directory: {parent}', code='invalid'))
        return checkpoint
