#SCRIPT TO CREATE A SYNTHETIC GUIDE / LOW-RES OUTPUT PAIR FOR `manage.py upsample`

import os
import sys
from pathlib import Path

import django

DJANGO_BASE_DIR = Path(__file__).parent.parent
OUTPUT_DIR = DJANGO_BASE_DIR / 'toy_images'
SIZE = 256
LOW_RES_FACTOR = 4
SEED = 0

sys.path.append(str(DJANGO_BASE_DIR))
os.environ['DJANGO_SETTINGS_MODULE'] = 'project.settings'

django.setup()

if __name__ == "__main__":
    import numpy as np

    from dgf.filters import bilinear_resize
    from dgf.storage import save_image, save_tensors
    from dgf.tasks import affine, random_image

    OUTPUT_DIR.mkdir(exist_ok=True)

    rng = np.random.default_rng(SEED)
    guide = random_image(rng, SIZE, SIZE)
    low_size = SIZE // LOW_RES_FACTOR
    low_res_output = affine(bilinear_resize(guide, low_size, low_size))

    save_image(OUTPUT_DIR / 'guide.ppm', guide)
    save_image(OUTPUT_DIR / 'low_res_output.ppm', low_res_output)
    save_tensors(OUTPUT_DIR / 'low_res_output.dgft', {'low_res_output': low_res_output})

    print(f'wrote guide {guide.shape} and low-res output {low_res_output.shape} to {OUTPUT_DIR}')
