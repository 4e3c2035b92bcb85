class Constant:
    # CODATA values
    HBAR = 1.054571817e-34
    K_B = 1.380649e-23
    C_LIGHT = 299792458.0

    SCHEMA_VERSION = 1

    FREQ_HZ = "freq_hz"
    PSD_VALUE = "psd_value"
    SPECTRUM_COLUMNS = [FREQ_HZ, PSD_VALUE]

    KEY = "key"
    VALUE = "value"
    KEY_VALUE_COLUMNS = [KEY, VALUE]

    CONVENTION = (
        "f(w)=int f(t) exp(i w t) dt; <n_i(w) n_j(w')> = 2pi C_ij(w) delta(w+w'); "
        "S(w) = sum_ij c_i(w) C_ij(w) c_j(-w), global 2pi dropped; two-sided, per rad/s "
        "equals per-Hz density at f = w/2pi"
    )

    SOLVER_FULL = "full"
    SOLVER_RWA = "rwa"
    SOLVERS = (SOLVER_FULL, SOLVER_RWA)

    QUADRATURE_X = "x"
    QUADRATURE_Y = "y"
    QUADRATURES = (QUADRATURE_X, QUADRATURE_Y)

    PORT_TRANSMISSION_2 = "t2"
    PORT_REFLECTION_1 = "r1"
    NATIVE_PORTS = (PORT_TRANSMISSION_2, PORT_REFLECTION_1)
    GENERIC_PORTS = ("t1", "r2")

    LO_REFERENCE_LASER = "laser"
    LO_REFERENCE_FIELD = "field"

    STATE_LABELS = ("a1", "a1_dag", "a2", "a2_dag", "b1", "b1_dag", "b2", "b2_dag")
