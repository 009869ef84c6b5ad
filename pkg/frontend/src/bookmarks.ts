import type { Bookmark, OrbitState } from "./types.js";

/** Minimal slice of the Web Storage interface used here. */
export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

const STORAGE_KEY = "chronofield.bookmarks";

export class MemoryStore implements KeyValueStore {
  private data = new Map<string, string>();

  getItem(key: string): string | null {
    return this.data.get(key) ?? null;
  }

  setItem(key: string, value: string): void {
    this.data.set(key, value);
  }
}

export class BookmarkStore {
  constructor(private readonly storage: KeyValueStore) {}

  list(): Bookmark[] {
    const raw = this.storage.getItem(STORAGE_KEY);
    if (!raw) return [];
    try {
      return JSON.parse(raw) as Bookmark[];
    } catch {
      return [];
    }
  }

  /** Saves under a unique name; duplicates get a numeric suffix. */
  add(name: string, orbit: OrbitState, timeIndex: number): Bookmark {
    const existing = this.list();
    const names = new Set(existing.map((b) => b.name));
    let unique = name;
    for (let n = 2; names.has(unique); n += 1) {
      unique = `${name} (${n})`;
    }
    const bookmark: Bookmark = {
      name: unique,
      orbit: { ...orbit, target: [...orbit.target] as OrbitState["target"] },
      timeIndex,
    };
    existing.push(bookmark);
    this.storage.setItem(STORAGE_KEY, JSON.stringify(existing));
    return bookmark;
  }

  get(name: string): Bookmark | undefined {
    return this.list().find((b) => b.name === name);
  }
}
