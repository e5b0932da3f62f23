"""CSV tables and SVG figures rendered from a results document (views only, no recomputation)."""
from __future__ import annotations

import csv
from pathlib import Path


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_tables(results: dict, out: Path) -> list[Path]:
    written = []
    ranking = results.get("attack_ranking")
    if ranking:
        path = out / "attack_ranking.csv"
        cols = ["rank", "branch_id", "from_bus", "to_bus", "feeder", "risk", "prob", "score_0_100", "top_k"]
        _write_csv(path, cols, ([r.get(c) for c in cols] for r in ranking["assets"]))
        written.append(path)

    defenses = results.get("defenses")
    if defenses:
        path = out / "load_served.csv"
        rows = []
        for r in defenses["per_attack"]:
            pa, pd = r["post_attack"], r["post_defense"]
            rows.append([r["rank"], r["attack"], pa["load_served_pct"], pd["load_served_pct"], pa["f1"], pd["f1"],
                         pa["f3"], pd["f3"], pd["f2"], " ".join(r["defense"]["closed_ties"])])
        _write_csv(path, ["rank", "attack", "post_attack_pct", "post_defense_pct", "f1_attack", "f1_defense",
                          "f3_attack", "f3_defense", "f2_defense", "closed_ties"], rows)
        written.append(path)

        path = out / "attack_ties.csv"
        _write_csv(path, ["attack", "closed_ties"],
                   ([r["attack"], " ".join(r["defense"]["closed_ties"]) or "none"] for r in defenses["per_attack"]))
        written.append(path)

        vp = defenses["voltage_profile"]
        path = out / "voltage_profile.csv"
        _write_csv(path, ["bus", "base", "post_attack", "post_defense"],
                   zip(vp["bus"], vp["base"], vp["post_attack"], vp["post_defense"]))
        written.append(path)

        path = out / "pareto_front.csv"
        _write_csv(path, ["index", "f1", "f2", "f3", "closed_ties", "u"],
                   ([i, *m["objectives"], " ".join(m["closed_ties"]), " ".join(f"{x:.6g}" for x in m["u"])]
                    for i, m in enumerate(defenses["front"])))
        written.append(path)

    rec = results.get("recommendation")
    if rec:
        path = out / "tie_usage.csv"
        _write_csv(path, ["tie_id", "tie", "c_s"], ([t["tie_id"], t["tie"], t["c_s"]] for t in rec["tie_usage"]))
        written.append(path)

        path = out / "top_defenses.csv"
        rows = []
        for t in rec["top_defenses"]:
            s = t["stats"]
            rows.append([t["rank"], t["front_index"], s["robust_score"],
                         *(s["mu_hat"][k] for k in ("f1", "f2", "f3")),
                         *(s["sigma_hat"][k] for k in ("f1", "f2", "f3")),
                         *(s["ci95"][k] for k in ("f1", "f2", "f3")),
                         s["cvar"]["f1"], " ".join(t["closed_ties"])])
        _write_csv(path, ["rank", "front_index", "robust_score", "mu_f1", "mu_f2", "mu_f3", "sigma_f1", "sigma_f2",
                          "sigma_f3", "ci95_f1", "ci95_f2", "ci95_f3", "cvar_f1", "closed_ties"], rows)
        written.append(path)
    return written


def write_figures(results: dict, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "gridgame"
    meta = {"Date": None}
    written = []

    def save(fig, name):
        path = out / name
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=meta)
        plt.close(fig)
        written.append(path)

    ranking = results.get("attack_ranking")
    if ranking:
        top = ranking["assets"][:10]
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.bar([f"{r['from_bus']}-{r['to_bus']}" for r in top], [r["score_0_100"] for r in top], color="tab:red")
        ax.set_xlabel("attacked line")
        ax.set_ylabel("vulnerability score (0-100)")
        ax.tick_params(axis="x", rotation=45)
        save(fig, "attack_ranking.svg")

    defenses = results.get("defenses")
    if defenses:
        rows = defenses["per_attack"]
        labels = [r["attack"] for r in rows]
        x = range(len(rows))
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.bar([i - 0.2 for i in x], [r["post_attack"]["load_served_pct"] for r in rows], 0.4, label="post-attack")
        ax.bar([i + 0.2 for i in x], [r["post_defense"]["load_served_pct"] for r in rows], 0.4, label="post-defense")
        ax.set_xticks(list(x), labels)
        ax.set_ylabel("load served (%)")
        ax.set_ylim(0, 105)
        ax.legend()
        save(fig, "load_served.svg")

        vp = defenses["voltage_profile"]
        fig, ax = plt.subplots(figsize=(7, 3.5))
        nan = float("nan")
        for key, style in (("base", ":"), ("post_attack", "--"), ("post_defense", "-")):
            ax.plot(vp["bus"], [nan if v is None else v for v in vp[key]], style, label=key.replace("_", "-"))
        ax.axhline(0.95, color="grey", lw=0.8)
        ax.axhline(1.05, color="grey", lw=0.8)
        ax.set_xlabel("bus")
        ax.set_ylabel("|V| (p.u.)")
        ax.set_title(f"attack {vp['attack']}")
        ax.legend()
        save(fig, "voltage_profile.svg")

    rec = results.get("recommendation")
    if rec:
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.bar([t["tie"] for t in rec["tie_usage"]], [t["c_s"] for t in rec["tie_usage"]], color="tab:green")
        ax.set_xlabel("tie switch")
        ax.set_ylabel("usage frequency c_s")
        ax.set_ylim(0, 1.05)
        save(fig, "tie_usage.svg")
    return written


def write_report(results: dict, out: str | Path, figures: bool = True) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = write_tables(results, out)
    if figures:
        written += write_figures(results, out)
    return written
