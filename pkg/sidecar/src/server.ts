import { buildApp } from "./app.js";

const port = Number(process.env.PORT ?? 8787);
const d = Number(process.env.TWON_SIDECAR_D ?? 32);
if (!Number.isInteger(d) || d < 1) {
  console.error(`TWON_SIDECAR_D must be a positive integer, got ${process.env.TWON_SIDECAR_D}`);
  process.exit(1);
}
if (!Number.isInteger(port) || port < 0 || port > 65535) {
  console.error(`PORT must be 0..65535, got ${process.env.PORT}`);
  process.exit(1);
}

const app = buildApp({ d, version: "twon-sidecar/0.1.0" });
const server = app.listen(port, "127.0.0.1", () => {
  const address = server.address();
  const bound = typeof address === "object" && address ? address.port : port;
  // One parseable line so wrappers can discover the port when PORT=0.
  console.log(`sidecar listening on 127.0.0.1:${bound} d=${d}`);
});

for (const signal of ["SIGINT", "SIGTERM"] as const) {
  process.on(signal, () => {
    server.close(() => process.exit(0));
  });
}
