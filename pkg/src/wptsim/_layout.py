"""Index layout of the flat arrays exchanged with the cycle kernel.

Both kernel builds (compiled and pure Python) read and write these arrays in
place, so the layout is fixed here once. ``_kernel.pyx`` hardcodes the same
numbers; ``tests/test_kernel.py`` checks the two builds agree.
"""

# parameter vector
P_AMP = 0          # source EMF amplitude, V
P_OMEGA = 1        # carrier angular frequency, rad/s
P_RSRC = 2         # AC source resistance, ohm
P_RON = 3          # switch on-resistance, ohm
P_VDIODE = 4       # body-diode drop, V
P_TON = 5          # comparator ON delay, s
P_TOFF = 6         # comparator OFF delay, s
P_CF = 7           # filter capacitance, F
P_RLOAD = 8        # load resistance, ohm
P_IAUX = 9         # auxiliary (bias) current drawn from the output, A
P_DLINE = 10       # OFF-edge delay line, s; <= 0 selects conduction sensing
P_H = 11           # grid step, s
P_PERIOD = 12      # carrier period, s
P_RSUB = 13        # > 0 replaces the rectifier with this resistor
N_PARAMS = 14

# state vector
S_T = 0
S_V = 1
S_SW = 2           # + branch
S_ARM_ON = 4       # + 2*branch
S_ARM_OFF = 5      # + 2*branch
S_PEND_CLOSE = 8   # + 2*branch, -1 when idle
S_PEND_OPEN = 9    # + 2*branch, -1 when idle
N_STATE = 12

# per-cycle event block, one per branch at offset E_BRANCH*branch
E_BRANCH = 16
E_T_TRIP_ON = 0
E_SLOPE_TRIP_ON = 1
E_T_CLOSE = 2
E_VS_ON = 3
E_SLOPE_CLOSE = 4
E_T_TRIP_OFF = 5
E_SLOPE_TRIP_OFF = 6
E_T_OPEN = 7
E_VS_OFF = 8
E_SLOPE_OPEN = 9
E_CONDUCTED = 10
E_FORCED_OPEN = 11
E_N_CLOSE = 12

# integrals accumulated over the cycle
E_Q_RECT = 32
E_Q_RES = 33
E_Q_AUX = 34
E_E_SRC = 35       # int v_emf * i_ac
E_E_OUT = 36       # int v_out * i_res
E_E_PORT = 37      # int v_port * i_ac
E_INT_V = 38       # int v_out
E_VC = 39          # int v_port cos(wt)
E_VS = 40          # int v_port sin(wt)
E_IC = 41          # int i_ac cos(wt)
E_IS = 42          # int i_ac sin(wt)
E_CROSS = 43
E_V_START = 44
E_V_END = 45
N_EVENTS = 48

N_AUG = 12         # v plus the 11 integrals E_Q_RECT..E_IS

# recorded sample columns
R_T = 0
R_V = 1
R_SW0 = 2
R_SW1 = 3
N_REC = 4
