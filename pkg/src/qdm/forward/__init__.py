"""Forward model: chip currents to magnetic field maps and labelled image sets."""
from .field import PlaneGrid, biot_savart_plane, biot_savart_points
from .geometry import (
    FEA_GEOMETRY, RO_STATES, STANDOFF_PRESETS, ChipState, CurrentLayout, DiePlan, Region,
    StandoffConfig, WireSegment, fea_reference_layout, ro_current_layout, temperature_of_state,
)
