"""Frozen reference data used as independent oracles by the tests.

LOCAL_MODES_EV: the 8 (omega, kappa) pairs attached to every state of the
two- and three-site models. DEBYE_MODES_EV: the reference 70-mode
discretization of the Debye bath (reorg 62.5 cm^-1, cutoff 500 cm^-1,
12 cm^-1 grid) used by the many-mode models.
"""

import numpy as np

LOCAL_MODES_EV = np.array([
    (0.0680, -0.0266),
    (0.0811, -0.0194),
    (0.1649, -0.1120),
    (0.1727, -0.0720),
    (0.1748, 0.0378),
    (0.1823, 0.0383),
    (0.1991, 0.1101),
    (0.2020, 0.0642),
])

DEBYE_MODES_EV = np.array([
    (0.00148782, 0.00059338),
    (0.00297563, 0.00083844),
    (0.00446345, 0.00102541),
    (0.00595126, 0.00118167),
    (0.00743908, 0.00131777),
    (0.00892689, 0.00143906),
    (0.01041471, 0.00154869),
    (0.01190252, 0.00164871),
    (0.01339034, 0.00174052),
    (0.01487815, 0.00182515),
    (0.01636597, 0.00190338),
    (0.01785378, 0.00197582),
    (0.01934160, 0.00204296),
    (0.02082941, 0.00210521),
    (0.02231723, 0.00216293),
    (0.02380504, 0.00221641),
    (0.02529286, 0.00226594),
    (0.02678067, 0.00231174),
    (0.02826849, 0.00235404),
    (0.02975630, 0.00239305),
    (0.03124412, 0.00242894),
    (0.03273193, 0.00246191),
    (0.03421975, 0.00249211),
    (0.03570756, 0.00251970),
    (0.03719538, 0.00254483),
    (0.03868320, 0.00256765),
    (0.04017101, 0.00258828),
    (0.04165883, 0.00260686),
    (0.04314664, 0.00262349),
    (0.04463446, 0.00263831),
    (0.04612227, 0.00265142),
    (0.04761009, 0.00266293),
    (0.04909790, 0.00267293),
    (0.05058572, 0.00268151),
    (0.05207353, 0.00268878),
    (0.05356135, 0.00269480),
    (0.05504916, 0.00269967),
    (0.05653698, 0.00270345),
    (0.05802479, 0.00270622),
    (0.05951261, 0.00270806),
    (0.06100042, 0.00270901),
    (0.06248824, 0.00270914),
    (0.06397605, 0.00270851),
    (0.06546387, 0.00270717),
    (0.06695168, 0.00270518),
    (0.06843950, 0.00270257),
    (0.06992731, 0.00269940),
    (0.07141513, 0.00269570),
    (0.07290294, 0.00269152),
    (0.07439076, 0.00268689),
    (0.07587858, 0.00268184),
    (0.07736639, 0.00267641),
    (0.07885421, 0.00267063),
    (0.08034202, 0.00266452),
    (0.08182984, 0.00265812),
    (0.08331765, 0.00265145),
    (0.08480547, 0.00264453),
    (0.08629328, 0.00263738),
    (0.08778110, 0.00263002),
    (0.08926891, 0.00262247),
    (0.09075673, 0.00261476),
    (0.09224454, 0.00260689),
    (0.09373236, 0.00259888),
    (0.09522017, 0.00259075),
    (0.09670799, 0.00258250),
    (0.09819580, 0.00257416),
    (0.09968362, 0.00256573),
    (0.10117143, 0.00255723),
    (0.10265925, 0.00254866),
    (0.10414706, 0.00254004),
])

SITE_MATRICES_EV = {
    "I": [[0.0, 0.2], [0.2, 0.0]],
    "II": [[0.2, 0.2], [0.2, 0.0]],
    "III": [[0.0, 0.2, 0.0], [0.2, 0.0, 0.2], [0.0, 0.2, 0.0]],
    "IV": [[0.2, 0.2, 0.0], [0.2, 0.1, 0.2], [0.0, 0.2, 0.0]],
    "V": [[0.0, 0.03], [0.03, 0.0]],
    "VI": [[0.03, 0.03], [0.03, 0.0]],
}
