/** Typed client for the clickseg session service. */

export interface ClickRecord {
  frame: number;
  x: number;
  y: number;
  instance: number;
}

export interface SessionManifest {
  id: string;
  frames: number;
  width: number;
  height: number;
  stride: number;
  has_gt: boolean;
  has_result?: boolean;
  clicks: ClickRecord[];
  last_run: { status: string; frames: number } | null;
}

export interface MaskRLE {
  frame: number;
  width: number;
  height: number;
  runs: number[];
}

export interface InstanceScore {
  id: number | string;
  class: string | null;
  iou: number;
}

export interface Metrics {
  per_instance: InstanceScore[];
  per_class: Record<string, number>;
  miou: number;
  unmatched_clicks?: number[];
}

export class ApiError extends Error {
  status: number;
  payload: unknown;

  constructor(status: number, payload: unknown) {
    super(`HTTP ${status}`);
    this.status = status;
    this.payload = payload;
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(url, init);
  const body = await resp.json().catch(() => null);
  if (!resp.ok) {
    throw new ApiError(resp.status, body);
  }
  return body as T;
}

export class Client {
  constructor(readonly baseUrl: string = "") {}

  createSession(source: Record<string, unknown>): Promise<{ id: string }> {
    return request(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ source }),
    });
  }

  listSessions(): Promise<{ sessions: { id: string; frames: number; has_gt: boolean }[] }> {
    return request(`${this.baseUrl}/sessions`);
  }

  getSession(id: string): Promise<SessionManifest> {
    return request(`${this.baseUrl}/sessions/${id}`);
  }

  addClick(id: string, frame: number, x: number, y: number): Promise<{ instance_id: number }> {
    return request(`${this.baseUrl}/sessions/${id}/clicks`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ frame, x, y }),
    });
  }

  deleteClick(id: string, instance: number): Promise<{ removed: number }> {
    return request(`${this.baseUrl}/sessions/${id}/clicks/${instance}`, { method: "DELETE" });
  }

  run(id: string): Promise<{ status: string; frames: number }> {
    return request(`${this.baseUrl}/sessions/${id}/run`, { method: "POST" });
  }

  getMask(id: string, frame: number): Promise<MaskRLE> {
    return request(`${this.baseUrl}/sessions/${id}/masks/${frame}?format=rle`);
  }

  getMetrics(id: string): Promise<Metrics> {
    return request(`${this.baseUrl}/sessions/${id}/metrics`);
  }

  frameUrl(id: string, frame: number): string {
    return `${this.baseUrl}/sessions/${id}/frames/${frame}`;
  }
}
