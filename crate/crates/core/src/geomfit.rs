//! Initial-mesh fitting: weighted least squares placement of control points
//! so the subdivided geometry tracks a target surface.
