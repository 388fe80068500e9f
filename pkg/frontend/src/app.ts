/** Single-page client: preference form on the left, results on the
 * right. All data flows through the REST API; the only client state is
 * the current form and the last response. */

import { ApiClient, ApiError, QueryResponse, RecipeDetail } from "./api.js";
import {
  BoundOp,
  ConstraintRow,
  OP_LABELS,
  PreferenceForm,
  emptyForm,
  emptyRow,
  filterVocabulary,
  fromQueryJson,
  staleSelections,
  toQueryJson,
  validateForm,
} from "./model.js";

const NUTRIENT_SUGGESTIONS = [
  "calories",
  "carbohydrates",
  "cholesterol",
  "fat_calories",
  "fiber",
  "protein",
  "saturated_fat",
  "sodium",
  "sugar",
  "total_fat",
];

type Attrs = Record<string, string | boolean | ((event: Event) => void)>;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Attrs = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (typeof value === "function") {
      node.addEventListener(key, value);
    } else if (typeof value === "boolean") {
      if (value) node.setAttribute(key, "");
      else node.removeAttribute(key);
    } else {
      node.setAttribute(key, value);
    }
  }
  node.append(...children);
  return node;
}

class App {
  private readonly client: ApiClient;
  private readonly root: HTMLElement;
  private form: PreferenceForm = emptyForm();
  private vocabulary: string[] = [];
  private knownTags: string[] = [];
  private lastResponse: QueryResponse | null = null;
  private serverError: string | null = null;
  private emptyNotice = false;
  private busy = false;
  private readonly detailCache = new Map<string, RecipeDetail>();
  private readonly openPanels = new Set<string>();

  constructor(root: HTMLElement, client: ApiClient) {
    this.root = root;
    this.client = client;
  }

  async start(): Promise<void> {
    try {
      this.knownTags = await this.client.tags();
    } catch (error) {
      this.renderOffline(error);
      return;
    }
    this.render();
  }

  private renderOffline(error: unknown): void {
    const message =
      error instanceof ApiError ? error.message : String(error);
    this.root.replaceChildren(
      el("div", { class: "banner error" }, [
        el("p", {}, [`The recommendation service is unreachable. ${message}`]),
        el("button", { click: () => void this.start() }, ["Retry"]),
      ]),
    );
  }

  private async onTagChange(tag: string): Promise<void> {
    this.form.tag = tag || null;
    if (this.form.tag) {
      try {
        this.vocabulary = await this.client.ingredients(this.form.tag);
      } catch (error) {
        this.renderOffline(error);
        return;
      }
    } else {
      this.vocabulary = [];
    }
    this.render();
  }

  private async onSubmit(): Promise<void> {
    const validation = validateForm(this.form);
    if (!validation.valid || this.busy) return;
    this.busy = true;
    this.serverError = null;
    this.render();
    try {
      const response = await this.client.submitQuery(toQueryJson(this.form));
      if (response !== null) {
        this.lastResponse = response;
        this.emptyNotice = response.titles.length === 0;
        this.openPanels.clear();
      }
    } catch (error) {
      this.serverError =
        error instanceof ApiError
          ? `${error.code}: ${error.message}`
          : String(error);
    } finally {
      this.busy = false;
      this.render();
    }
  }

  private refine(): void {
    if (this.lastResponse) {
      this.form = fromQueryJson(this.lastResponse.query);
      void this.onTagChange(this.form.tag ?? "");
    }
  }

  private async togglePanel(id: string, host: HTMLElement): Promise<void> {
    if (this.openPanels.has(id)) {
      this.openPanels.delete(id);
      this.render();
      return;
    }
    if (!this.detailCache.has(id)) {
      try {
        this.detailCache.set(id, await this.client.recipe(id));
      } catch (error) {
        host.append(
          el("p", { class: "error" }, [
            error instanceof ApiError ? error.message : String(error),
          ]),
        );
        return;
      }
    }
    this.openPanels.add(id);
    this.render();
  }

  // ----- form rendering -------------------------------------------------

  private chipList(kind: "includes" | "excludes"): HTMLElement {
    const names = this.form[kind];
    const stale = new Set(staleSelections(this.form, this.vocabulary));
    const chips = names.map((name) =>
      el("span", { class: stale.has(name) ? "chip stale" : "chip" }, [
        name,
        el("button", {
          class: "chip-remove",
          title: "remove",
          click: () => {
            this.form[kind] = this.form[kind].filter((n) => n !== name);
            this.render();
          },
        }, ["×"]),
      ]),
    );
    return el("div", { class: "chips" }, chips);
  }

  private typeahead(kind: "includes" | "excludes", label: string): HTMLElement {
    const input = el("input", {
      type: "text",
      placeholder: this.form.tag ? `add ${label}` : "choose a tag first",
    });
    if (!this.form.tag) input.disabled = true;
    const matches = el("ul", { class: "matches" });
    const refresh = () => {
      const selected = [...this.form.includes, ...this.form.excludes];
      const found = filterVocabulary(this.vocabulary, input.value, selected);
      matches.replaceChildren(
        ...found.map((name) =>
          el("li", {}, [
            el("button", {
              click: () => {
                this.form[kind] = [...this.form[kind], name];
                this.render();
              },
            }, [name]),
          ]),
        ),
      );
    };
    input.addEventListener("input", refresh);
    return el("div", { class: "picker" }, [
      el("label", {}, [label]),
      this.chipList(kind),
      input,
      matches,
    ]);
  }

  private constraintRowView(row: ConstraintRow, index: number): HTMLElement {
    const validation = validateForm(this.form);
    const errorsFor = (field: string) =>
      validation.rowErrors
        .filter((e) => e.index === index && e.field === field)
        .map((e) => e.message)
        .join("; ");

    const nutrient = el("input", {
      type: "text",
      list: "nutrient-names",
      placeholder: "nutrient",
      value: row.nutrient,
      input: (event) => {
        row.nutrient = (event.target as HTMLInputElement).value;
        this.renderErrorsOnly();
      },
    });
    const op = el("select", {
      change: (event) => {
        row.op = (event.target as HTMLSelectElement).value as BoundOp;
        this.render();
      },
    });
    for (const [value, label] of Object.entries(OP_LABELS)) {
      const option = el("option", { value }, [label]);
      if (value === row.op) option.selected = true;
      op.append(option);
    }

    const numeric = (field: "value" | "lo" | "hi", placeholder: string) =>
      el("input", {
        type: "text",
        class: "num",
        placeholder,
        value: row[field],
        input: (event) => {
          row[field] = (event.target as HTMLInputElement).value;
          this.renderErrorsOnly();
        },
      });

    const cells: (Node | string)[] = [nutrient, op];
    if (row.op === "range") {
      cells.push(numeric("lo", "low"), el("span", {}, ["to"]), numeric("hi", "high"));
    } else {
      cells.push(numeric("value", "value"));
    }
    cells.push(
      el("button", {
        class: "row-remove",
        title: "remove constraint",
        click: () => {
          this.form.constraints.splice(index, 1);
          this.render();
        },
      }, ["remove"]),
    );

    const messages = ["nutrient", "value", "lo", "hi"]
      .map(errorsFor)
      .filter(Boolean)
      .join("; ");
    const children: (Node | string)[] = [el("div", { class: "row-cells" }, cells)];
    if (messages) {
      children.push(el("p", { class: "error row-error" }, [messages]));
    }
    return el("div", { class: "constraint-row" }, children);
  }

  private formView(): HTMLElement {
    const validation = validateForm(this.form);
    const tagSelect = el("select", {
      change: (event) =>
        void this.onTagChange((event.target as HTMLSelectElement).value),
    });
    tagSelect.append(el("option", { value: "" }, ["choose a tag"]));
    for (const tag of this.knownTags) {
      const option = el("option", { value: tag }, [tag]);
      if (tag === this.form.tag) option.selected = true;
      tagSelect.append(option);
    }

    const stale = staleSelections(this.form, this.vocabulary);
    const notices: HTMLElement[] = [];
    if (this.form.tag && stale.length > 0) {
      notices.push(
        el("p", { class: "warning" }, [
          `not in the ${this.form.tag} vocabulary: ${stale.join(", ")}`,
        ]),
      );
    }
    for (const message of validation.formErrors) {
      notices.push(el("p", { class: "hint" }, [message]));
    }
    if (this.serverError) {
      notices.push(el("p", { class: "error" }, [this.serverError]));
    }

    const submit = el("button", {
      class: "submit",
      click: () => void this.onSubmit(),
    }, [this.busy ? "searching..." : "Find recipes"]);
    if (!validation.valid || this.busy) submit.disabled = true;

    return el("section", { class: "form" }, [
      el("h2", {}, ["Preferences"]),
      el("label", {}, ["dietary tag"]),
      tagSelect,
      this.typeahead("includes", "liked ingredients"),
      this.typeahead("excludes", "disliked ingredients"),
      el("h3", {}, ["Nutrient limits"]),
      el(
        "div",
        { class: "constraints" },
        this.form.constraints.map((row, i) => this.constraintRowView(row, i)),
      ),
      el("button", {
        click: () => {
          this.form.constraints.push(emptyRow());
          this.render();
        },
      }, ["add constraint"]),
      ...notices,
      submit,
    ]);
  }

  // ----- results rendering ----------------------------------------------

  private detailPanel(detail: RecipeDetail): HTMLElement {
    const nutrients = Object.entries(detail.nutrition).map(([name, value]) =>
      el("tr", {}, [el("td", {}, [name]), el("td", {}, [String(value)])]),
    );
    return el("div", { class: "panel" }, [
      el("h4", {}, ["Ingredients"]),
      el("ul", {}, detail.ingredients.map((name) => el("li", {}, [name]))),
      el("h4", {}, ["Steps"]),
      el("ol", {}, detail.instructions.map((step) => el("li", {}, [step]))),
      el("h4", {}, ["Nutrition"]),
      el("table", {}, nutrients),
      el("p", { class: "tags" }, [detail.tags.join(", ")]),
    ]);
  }

  private resultsView(): HTMLElement {
    const section = el("section", { class: "results" }, [
      el("h2", {}, ["Results"]),
    ]);
    const response = this.lastResponse;
    if (!response) {
      section.append(el("p", { class: "hint" }, ["no query submitted yet"]));
      return section;
    }
    if (this.emptyNotice) {
      section.append(
        el("p", { class: "notice" }, ["no recipe satisfies all constraints"]),
      );
    }
    if (response.failed_chunks.length > 0) {
      section.append(
        el("p", { class: "warning" }, [
          `${response.failed_chunks.length} context chunk(s) failed; results may be incomplete`,
        ]),
      );
    }
    const hallucinated = response.per_chunk.flatMap((c) => c.hallucinated);
    if (hallucinated.length > 0) {
      section.append(
        el("p", { class: "warning" }, [
          `dropped ${hallucinated.length} title(s) not present in the context`,
        ]),
      );
    }

    const list = el("ul", { class: "titles" });
    for (const entry of response.results) {
      const item = el("li", {}, []);
      const title = el("button", { class: "title" }, [entry.title]);
      if (entry.id) {
        const id = entry.id;
        title.addEventListener("click", () => void this.togglePanel(id, item));
      } else {
        title.disabled = true;
      }
      item.append(title);
      if (entry.id && this.openPanels.has(entry.id)) {
        const detail = this.detailCache.get(entry.id);
        if (detail) item.append(this.detailPanel(detail));
      }
      list.append(item);
    }
    section.append(list);

    section.append(
      el("details", { class: "echo" }, [
        el("summary", {}, ["query sent"]),
        el("pre", {}, [JSON.stringify(response.query, null, 2)]),
        el("button", { click: () => this.refine() }, ["refine this query"]),
      ]),
    );
    return section;
  }

  private render(): void {
    const datalist = el("datalist", { id: "nutrient-names" });
    for (const name of NUTRIENT_SUGGESTIONS) {
      datalist.append(el("option", { value: name }));
    }
    this.root.replaceChildren(
      el("main", { class: "layout" }, [this.formView(), this.resultsView()]),
      datalist,
    );
  }

  /** Re-render without rebuilding inputs, so typing keeps focus; only
   * the error text and submit state change while a field is edited. */
  private renderErrorsOnly(): void {
    const validation = validateForm(this.form);
    const submit = this.root.querySelector<HTMLButtonElement>("button.submit");
    if (submit) submit.disabled = !validation.valid || this.busy;
  }
}

export function initApp(root: HTMLElement, client: ApiClient): Promise<void> {
  return new App(root, client).start();
}

function defaultBase(): string {
  const params = new URLSearchParams(window.location.search);
  const override = params.get("api");
  if (override) return override;
  if (window.location.origin && window.location.origin !== "null") {
    return window.location.origin;
  }
  return "http://127.0.0.1:8000";
}

if (typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root) {
    void initApp(root, new ApiClient(defaultBase()));
  }
}
