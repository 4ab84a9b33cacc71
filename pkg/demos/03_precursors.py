"""
Refreshing the window before a management frame
===============================================

When pings are sparse the client's window is stale and a genuine frame can be
rejected. The sender can push a few encrypted precursor frames first; on a
rejection the client answers with an N-ACK and the sender retries with a
longer burst.
"""

from csite import CreConfig, NackMessage, decode_nack, encode_nack, precursor_length, sender_step
from csite.assurance import SenderEvent, SenderState
from csite.harness import evaluate_cre

cre = CreConfig(l1=4, l_w_peer=45)
print("burst lengths:", [precursor_length(j, cre) for j in range(1, 7)])

wire = encode_nack("PROBE_RESPONSE", 812)
print("N-ACK on the wire:", wire, "->", decode_nack(wire))

# the sender side, driven by hand
mf = NackMessage("PROBE_RESPONSE", 812)
state, burst = sender_step(SenderState(), SenderEvent.SUBMIT_MF, cre, mf)
print("attempt", state.attempt_j, "sends", [kind for _, kind in burst])
state, burst = sender_step(state, SenderEvent.NACK_RECEIVED, cre, mf)
print("attempt", state.attempt_j, "sends", len(burst) - 1, "precursors then the MF")
state, _ = sender_step(state, SenderEvent.ACK_TIMEOUT_CLEAN, cre)
print("delivered:", state.delivered)

# end to end at 5 Hz of background traffic
for l_pre in (0, 10, 45):
    r = evaluate_cre("G", f_s=5.0, l_pre=l_pre, seeds=[1], duration=20.0)
    print(f"L_pre={l_pre:2d}  one-shot {r.one_shot_rate:.2f}  attempts {r.attempts}")
