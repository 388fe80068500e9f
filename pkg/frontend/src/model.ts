/** Form state for building structured recipe queries, plus the
 * conversions between form state and the service's query JSON. */

/** One bound selector: kind plus strictness folded into a single op. */
export type BoundOp = "le" | "lt" | "ge" | "gt" | "range";

export const OP_LABELS: Record<BoundOp, string> = {
  le: "at most",
  lt: "less than",
  ge: "at least",
  gt: "more than",
  range: "within range",
};

/** Raw input strings so the form can hold partially typed values. */
export interface ConstraintRow {
  nutrient: string;
  op: BoundOp;
  value: string;
  lo: string;
  hi: string;
}

export interface PreferenceForm {
  tag: string | null;
  includes: string[];
  excludes: string[];
  constraints: ConstraintRow[];
}

export interface QueryConstraintJson {
  nutrient: string;
  kind: "less_than" | "at_least" | "range";
  value?: number;
  lo?: number;
  hi?: number;
  inclusive?: boolean;
}

export interface QueryJson {
  tag: string;
  includes: string[];
  excludes: string[];
  constraints: QueryConstraintJson[];
}

export interface RowError {
  index: number;
  field: "nutrient" | "value" | "lo" | "hi";
  message: string;
}

export interface FormValidation {
  valid: boolean;
  formErrors: string[];
  rowErrors: RowError[];
}

export function emptyForm(): PreferenceForm {
  return { tag: null, includes: [], excludes: [], constraints: [] };
}

export function emptyRow(): ConstraintRow {
  return { nutrient: "", op: "le", value: "", lo: "", hi: "" };
}

function parseNumber(raw: string): number | null {
  const text = raw.trim();
  if (text === "") return null;
  const value = Number(text);
  return Number.isFinite(value) ? value : null;
}

/** Every reason the form cannot be submitted yet; submit stays
 * disabled until this returns valid. */
export function validateForm(form: PreferenceForm): FormValidation {
  const formErrors: string[] = [];
  const rowErrors: RowError[] = [];

  if (!form.tag) {
    formErrors.push("choose a tag");
  }
  const overlap = form.includes.filter((name) => form.excludes.includes(name));
  for (const name of overlap) {
    formErrors.push(`"${name}" cannot be both liked and disliked`);
  }
  for (const [label, names] of [
    ["liked", form.includes],
    ["disliked", form.excludes],
  ] as const) {
    if (new Set(names).size !== names.length) {
      formErrors.push(`duplicate ${label} ingredient`);
    }
  }

  form.constraints.forEach((row, index) => {
    if (row.nutrient.trim() === "") {
      rowErrors.push({ index, field: "nutrient", message: "name a nutrient" });
    }
    if (row.op === "range") {
      const lo = parseNumber(row.lo);
      const hi = parseNumber(row.hi);
      if (lo === null) {
        rowErrors.push({ index, field: "lo", message: "enter a number" });
      } else if (lo < 0) {
        rowErrors.push({ index, field: "lo", message: "must be 0 or more" });
      }
      if (hi === null) {
        rowErrors.push({ index, field: "hi", message: "enter a number" });
      }
      if (lo !== null && hi !== null && !(lo < hi)) {
        rowErrors.push({
          index,
          field: "hi",
          message: "upper bound must exceed lower bound",
        });
      }
    } else if (parseNumber(row.value) === null) {
      rowErrors.push({ index, field: "value", message: "enter a number" });
    }
  });

  return {
    valid: formErrors.length === 0 && rowErrors.length === 0,
    formErrors,
    rowErrors,
  };
}

/** Build the structured query payload; call only on a valid form. */
export function toQueryJson(form: PreferenceForm): QueryJson {
  if (!form.tag) {
    throw new Error("form has no tag");
  }
  const constraints = form.constraints.map((row): QueryConstraintJson => {
    if (row.op === "range") {
      return {
        nutrient: row.nutrient.trim(),
        kind: "range",
        lo: Number(row.lo),
        hi: Number(row.hi),
      };
    }
    const kind = row.op === "le" || row.op === "lt" ? "less_than" : "at_least";
    const inclusive = row.op === "le" || row.op === "ge";
    return {
      nutrient: row.nutrient.trim(),
      kind,
      value: Number(row.value),
      inclusive,
    };
  });
  return {
    tag: form.tag,
    includes: [...form.includes],
    excludes: [...form.excludes],
    constraints,
  };
}

/** Pre-fill the form from an echoed query so results can be refined. */
export function fromQueryJson(query: QueryJson): PreferenceForm {
  const constraints = query.constraints.map((c): ConstraintRow => {
    if (c.kind === "range") {
      return {
        nutrient: c.nutrient,
        op: "range",
        value: "",
        lo: String(c.lo),
        hi: String(c.hi),
      };
    }
    const inclusive = c.inclusive !== false;
    const op: BoundOp =
      c.kind === "less_than" ? (inclusive ? "le" : "lt") : inclusive ? "ge" : "gt";
    return { nutrient: c.nutrient, op, value: String(c.value), lo: "", hi: "" };
  });
  return {
    tag: query.tag,
    includes: [...query.includes],
    excludes: [...query.excludes],
    constraints,
  };
}

/** Selections that fell outside the vocabulary after a tag change. */
export function staleSelections(
  form: PreferenceForm,
  vocabulary: string[],
): string[] {
  const known = new Set(vocabulary);
  return [...form.includes, ...form.excludes].filter((name) => !known.has(name));
}

/** Typeahead matches: case-insensitive substring, selected names and
 * empty input excluded, capped for display. */
export function filterVocabulary(
  vocabulary: string[],
  input: string,
  selected: string[],
  limit = 8,
): string[] {
  const needle = input.trim().toLowerCase();
  if (needle === "") return [];
  const taken = new Set(selected);
  const matches: string[] = [];
  for (const name of vocabulary) {
    if (taken.has(name)) continue;
    if (name.toLowerCase().includes(needle)) {
      matches.push(name);
      if (matches.length >= limit) break;
    }
  }
  return matches;
}
