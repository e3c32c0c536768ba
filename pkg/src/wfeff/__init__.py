"""Wright-Fisher model with efficiency: discrete simulation, limiting
diffusions, fixation analytics, the ASEG genealogy and moment duality."""

__version__ = "0.1.0"
