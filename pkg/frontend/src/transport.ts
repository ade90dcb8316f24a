// Transports carry one request line and resolve with one response line.
// The browser uses the HTTP bridge; tests may inject raw-TCP or mock
// transports. RecordingTransport wraps any of them so tests can prove every
// displayed value originated from a service payload.

import { Request, Response, decodeMessage, encodeMessage } from "./protocol.js";

export interface Transport {
  send(msg: Request): Promise<Response>;
}

export class HttpBridgeTransport implements Transport {
  constructor(private baseUrl: string = "") {}

  async send(msg: Request): Promise<Response> {
    const res = await fetch(this.baseUrl + "/api/message", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: encodeMessage(msg),
    });
    return decodeMessage(await res.text());
  }

  async fetchPreview(): Promise<unknown> {
    const res = await fetch(this.baseUrl + "/api/preview");
    return res.json();
  }
}

export class RecordingTransport implements Transport {
  requests: Request[] = [];
  responses: Response[] = [];

  constructor(private inner: Transport) {}

  async send(msg: Request): Promise<Response> {
    this.requests.push(msg);
    const response = await this.inner.send(msg);
    this.responses.push(response);
    return response;
  }

  /** Every number that the UI displays must appear in some response payload. */
  sawNumber(value: number, epsilon = 0): boolean {
    const visit = (node: unknown): boolean => {
      if (typeof node === "number") {
        return epsilon === 0 ? node === value : Math.abs(node - value) <= epsilon;
      }
      if (Array.isArray(node)) return node.some(visit);
      if (node && typeof node === "object") {
        return Object.values(node as Record<string, unknown>).some(visit);
      }
      return false;
    };
    return this.responses.some(visit);
  }
}
