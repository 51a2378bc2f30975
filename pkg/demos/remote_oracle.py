"""Attack a classifier that lives behind an HTTP endpoint.

A tiny local server plays the remote API: it answers with the top-3 labels
and confidences, the way tagging services do.  The client maps those into a
dense score vector, and every answered request costs exactly one query.

Run with ``python3 demos/remote_oracle.py``.
"""

# %% Serve a small classifier over HTTP
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import torch

from mcgattack.attackers import make_attacker
from mcgattack.core import AttackGoal
from mcgattack.models import RequestMapping, ScoreMapping, make_shapes, remote_oracle, train_classifier
from mcgattack.models.oracle import decode_image

data = make_shapes(num_classes=4, size=16, n_train=400, n_test=50)
model = train_classifier(data, "arch_b", epochs=8, seed=0)
print(f"served model test error {model.test_error:.2f}")


class TaggingAPI(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        image = torch.from_numpy(decode_image(body["image"], "npy"))
        with torch.no_grad():
            probs = torch.softmax(model(image[None])[0], -1)
        top = torch.topk(probs, 3)
        tags = [{"tag": data.classes[i], "confidence": float(c)} for c, i in zip(top.values, top.indices)]
        payload = json.dumps({"result": {"tags": tags}}).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


server = ThreadingHTTPServer(("127.0.0.1", 0), TaggingAPI)
threading.Thread(target=server.serve_forever, daemon=True).start()
url = f"http://127.0.0.1:{server.server_address[1]}/tag"

# %% Point a remote oracle at it and run Square with a 300-query budget
oracle = remote_oracle(
    url,
    RequestMapping(encoding="npy"),
    ScoreMapping(mode="topk", field="result.tags", classes=list(data.classes), label_key="tag"),
    budget=300,
)
attacker = make_attacker("square")
for i in range(5):
    x, y = data.test_x[i], int(data.test_y[i])
    oracle.reset(300)
    result = attacker.run(oracle, x, AttackGoal.untargeted(y), epsilon=0.1, rng=torch.Generator().manual_seed(i))
    print(f"image {i} ({data.classes[y]}): success={result.success} after {result.queries_used} charged queries")

server.shutdown()
