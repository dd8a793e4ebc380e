"""Command-line surface: a thin client of the HTTP service.

Without ``--server`` the commands dispatch to the in-process service
functions; with it they POST the same payloads to a remote instance.
Exit codes: 0 ok, 1 user error, 2 internal error.
"""

from __future__ import annotations

import json
import sys

import click
import httpx
from pydantic import BaseModel

from . import service
from .errors import HikeyError


class Client:
    def __init__(self, server: str | None):
        self.server = server

    def call(self, path: str, request: BaseModel, handler):
        if self.server:
            resp = httpx.post(
                f"{self.server.rstrip('/')}{path}",
                json=request.model_dump(),
                timeout=600.0,
            )
            if resp.status_code >= 500:
                raise RuntimeError(f"server error: {resp.text}")
            if resp.status_code >= 400:
                raise HikeyError(resp.json().get("detail", resp.text))
            return resp.json()
        return handler(request).model_dump()


def run(client: Client, path: str, request: BaseModel, handler) -> dict:
    try:
        return client.call(path, request, handler)
    except HikeyError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except Exception as exc:  # noqa: BLE001 - anything else is an internal failure
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(2)


def _overrides(**kwargs) -> service.ConfigOverrides | None:
    values = {k: v for k, v in kwargs.items() if v is not None}
    return service.ConfigOverrides(**values) if values else None


server_option = click.option("--server", default=None, help="Remote service URL; default runs in-process.")
config_option = click.option("--config", "config_path", default=None, type=click.Path(), help="JSON config file; flags override its values.")

def retrieval_options(fn):
    fn = click.option("--alpha", type=float, default=None)(fn)
    fn = click.option("--beta", type=float, default=None)(fn)
    fn = click.option("--gamma", type=float, default=None)(fn)
    fn = click.option("--lambda", "lam", type=float, default=None)(fn)
    fn = click.option("--kdoc", "k_doc", type=int, default=None)(fn)
    fn = click.option("--ksec", "k_sec", type=int, default=None)(fn)
    fn = click.option("--routing-mode", type=click.Choice(["doc_only", "sec_only", "doc_then_sec"]), default=None)(fn)
    fn = click.option("--fusion-mode", type=click.Choice(["bm25_only", "plus_text_dense", "full_fusion"]), default=None)(fn)
    fn = click.option("--stage1-fields", type=click.Choice(["hierarchy", "body", "hierarchy+body"]), default=None)(fn)
    fn = click.option("--embedder", default=None, help="hash:<dim> or file:<path>")(fn)
    return fn

def packing_options(fn):
    fn = click.option("--m", "m_associates", type=int, default=None)(fn)
    fn = click.option("--image-cost", "image_token_cost", type=int, default=None)(fn)
    fn = click.option("--image-cap", type=int, default=None)(fn)
    return fn


@click.group()
def main():
    """Hierarchical coarse-to-fine multimodal retrieval engine."""


@main.command("index")
@click.argument("corpus", type=click.Path())
@click.argument("out_dir", type=click.Path())
@config_option
@server_option
@click.option("--embedder", default=None)
@click.option("--doc-card-max-tokens", type=int, default=None)
def cmd_index(corpus, out_dir, config_path, server, embedder, doc_card_max_tokens):
    """Build an index directory from a layout-block JSONL corpus."""
    request = service.IndexRequest(
        corpus_path=corpus, out_dir=out_dir, config_path=config_path,
        overrides=_overrides(embedder=embedder, doc_card_max_tokens=doc_card_max_tokens),
    )
    out = run(Client(server), "/index", request, service.index_endpoint)
    click.echo(json.dumps(out, indent=2, sort_keys=True))


@main.command("query")
@click.option("--index", "index_dir", required=True, type=click.Path())
@click.option("--query", required=True)
@config_option
@server_option
@retrieval_options
def cmd_query(index_dir, query, config_path, server, **overrides):
    """Rank documents and sections for a query; emits a JSON audit."""
    request = service.QueryRequest(
        index_dir=index_dir, query=query, config_path=config_path,
        overrides=_overrides(**overrides),
    )
    out = run(Client(server), "/query", request, service.query_endpoint)
    click.echo(json.dumps(out, indent=2, sort_keys=True))


@main.command("pack")
@click.option("--index", "index_dir", required=True, type=click.Path())
@click.option("--query", required=True)
@click.option("--budget", type=int, default=None)
@click.option("--prompt", is_flag=True, help="Wrap the context in the QA prompt template.")
@click.option("--audit", "audit_path", type=click.Path(), default=None,
              help="Write the JSON audit here instead of stderr.")
@config_option
@server_option
@retrieval_options
@packing_options
def cmd_pack(index_dir, query, budget, prompt, audit_path, config_path, server, **overrides):
    """Pack a budgeted evidence subgraph; context on stdout, audit as JSON."""
    request = service.PackRequest(
        index_dir=index_dir, query=query, prompt=prompt, config_path=config_path,
        overrides=_overrides(budget=budget, **overrides),
    )
    out = run(Client(server), "/pack", request, service.pack_endpoint)
    click.echo(out["prompt"] if prompt else out["context"], nl=False)
    audit = {k: out[k] for k in ("query", "config", "config_hash", "members", "total_tokens", "budget")}
    payload = json.dumps(audit, indent=2, sort_keys=True)
    if audit_path:
        with open(audit_path, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    else:
        click.echo(payload, err=True)


@main.command("eval")
@click.option("--index", "index_dir", required=True, type=click.Path())
@click.option("--queries", "queries_path", required=True, type=click.Path())
@click.option("--predictions", "predictions_path", type=click.Path(), default=None)
@click.option("--budgeted", "include_budgeted", is_flag=True,
              help="Also report document recall after budgeted packing.")
@click.option("--budget", type=int, default=None)
@config_option
@server_option
@retrieval_options
@packing_options
def cmd_eval(index_dir, queries_path, predictions_path, include_budgeted, budget,
             config_path, server, **overrides):
    """Run the retrieval/QA evaluation harness over a queries file."""
    request = service.EvalRequest(
        index_dir=index_dir, queries_path=queries_path,
        predictions_path=predictions_path, include_budgeted=include_budgeted,
        config_path=config_path, overrides=_overrides(budget=budget, **overrides),
    )
    out = run(Client(server), "/eval", request, service.eval_endpoint)
    click.echo(out["table"])
    click.echo(json.dumps({k: out[k] for k in ("report", "config", "config_hash")},
                          indent=2, sort_keys=True), err=True)


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def cmd_serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run(service.app, host=host, port=port)


if __name__ == "__main__":
    main()
