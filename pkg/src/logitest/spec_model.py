"""OpenAPI 3.x ingestion into a flat catalog of operations.

Only the subset the agents actually consume is modelled: operations,
parameters, a JSON request body (flattened one level), and response
descriptions. Anything else is skipped with a warning on the catalog.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Any
from urllib.parse import urlparse

import yaml

from .errors import EmptySpec, MalformedDocument

log = logging.getLogger(__name__)

METHODS = ("GET", "POST", "PUT", "PATCH", "DELETE")
SCHEMA_TYPES = ("string", "integer", "number", "boolean", "array", "object")
LOCATIONS = ("path", "query", "header", "body-field")

_PATH_VAR = re.compile(r"\{([^{}]+)\}")


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    location: str
    schema_type: str
    required: bool = False
    description: str = ""
    example: Any = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("parameter name must be nonempty")
        if self.location not in LOCATIONS:
            raise ValueError(f"bad parameter location {self.location!r}")
        if self.schema_type not in SCHEMA_TYPES:
            raise ValueError(f"bad schema type {self.schema_type!r}")
        if self.location == "path" and not self.required:
            object.__setattr__(self, "required", True)


@dataclass(frozen=True)
class ApiOperation:
    id: str
    method: str
    path: str
    summary: str = ""
    description: str = ""
    parameters: tuple[ParameterSpec, ...] = ()
    request_body_present: bool = False
    request_body_schema: dict | None = None
    response_specs: tuple[tuple[str, str], ...] = ()

    @property
    def key(self) -> str:
        return f"{self.method} {self.path}"

    def path_variables(self) -> list[str]:
        return _PATH_VAR.findall(self.path)

    def params_in(self, location: str) -> list[ParameterSpec]:
        return [p for p in self.parameters if p.location == location]


@dataclass
class ApiCatalog:
    title: str
    base_path: str
    operations: list[ApiOperation]
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._by_id = {op.id: op for op in self.operations}
        self._by_key = {op.key: op for op in self.operations}

    def __len__(self) -> int:
        return len(self.operations)

    def __iter__(self):
        return iter(self.operations)

    def __getitem__(self, op_id: str) -> ApiOperation:
        return self._by_id[op_id]

    def ids(self) -> list[str]:
        return [op.id for op in self.operations]

    def resolve(self, name: str) -> ApiOperation | None:
        """Look up an operation by id or by its ``METHOD path`` form."""
        name = " ".join(name.split())
        if name in self._by_id:
            return self._by_id[name]
        parts = name.split(" ", 1)
        if len(parts) == 2:
            return self._by_key.get(f"{parts[0].upper()} {parts[1]}")
        return None


class _Resolver:
    """Resolves local ``#/...`` JSON pointers, refusing cycles."""

    def __init__(self, document: dict, warnings: list[str]):
        self.document = document
        self.warnings = warnings

    def deref(self, node: Any, seen: frozenset = frozenset()) -> Any:
        while isinstance(node, dict) and "$ref" in node:
            ref = node["$ref"]
            if not isinstance(ref, str) or not ref.startswith("#/"):
                self.warnings.append(f"external $ref not supported: {ref!r}")
                return {}
            if ref in seen:
                self.warnings.append(f"cyclic $ref: {ref}")
                return {}
            seen = seen | {ref}
            target: Any = self.document
            for part in ref[2:].split("/"):
                part = part.replace("~1", "/").replace("~0", "~")
                if not isinstance(target, dict) or part not in target:
                    self.warnings.append(f"unresolvable $ref: {ref}")
                    return {}
                target = target[part]
            node = target
        return node

    def deep(self, node: Any, seen: frozenset = frozenset(), depth: int = 0) -> Any:
        # Fully inlined copy used for Markdown rendering; depth-capped.
        if depth > 12:
            return {"type": "object", "description": "(nesting truncated)"}
        if isinstance(node, dict) and "$ref" in node:
            ref = node["$ref"]
            if ref in seen:
                return {"type": "object", "description": f"(recursive {ref})"}
            return self.deep(self.deref(node), seen | {ref}, depth + 1)
        if isinstance(node, dict):
            return {k: self.deep(v, seen, depth + 1) for k, v in node.items()}
        if isinstance(node, list):
            return [self.deep(v, seen, depth + 1) for v in node]
        return node


def _load(document: str, format_hint: str) -> Any:
    if format_hint not in ("json", "yaml", "auto"):
        raise ValueError(f"unknown format hint {format_hint!r}")
    if format_hint == "json":
        try:
            return json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"invalid JSON: {exc}") from exc
    if format_hint == "auto" and document.lstrip().startswith("{"):
        try:
            return json.loads(document)
        except json.JSONDecodeError:
            pass
    try:
        return yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise MalformedDocument(f"invalid YAML: {exc}") from exc


def _schema_type(schema: dict, warnings: list[str], where: str) -> str:
    kind = schema.get("type")
    if isinstance(kind, list):
        kind = next((k for k in kind if k != "null"), None)
    if kind is None:
        if "properties" in schema:
            return "object"
        if "items" in schema:
            return "array"
        return "string"
    if kind not in SCHEMA_TYPES:
        warnings.append(f"{where}: unknown schema type {kind!r}, treated as string")
        return "string"
    return kind


def _example(param: dict, schema: dict) -> Any:
    if "example" in param:
        return param["example"]
    examples = param.get("examples")
    if isinstance(examples, dict) and examples:
        first = next(iter(examples.values()))
        if isinstance(first, dict):
            return first.get("value")
    return schema.get("example")


def _describe(node: dict, schema: dict | None = None) -> str:
    text = str(node.get("description", "") or "")
    enum = (schema or node).get("enum")
    if isinstance(enum, list) and enum:
        text = f"{text} (one of: {', '.join(str(v) for v in enum)})".strip()
    return text


def _needs_schema_dump(schema: Any) -> bool:
    # True when the flattened rows cannot represent the body faithfully.
    if not isinstance(schema, dict) or "properties" not in schema:
        return True
    for prop in schema["properties"].values():
        if not isinstance(prop, dict):
            continue
        for sub in (prop.get("properties") or {}).values():
            if isinstance(sub, dict) and ("properties" in sub or "items" in sub):
                return True
        items = prop.get("items")
        if isinstance(items, dict) and "properties" in items:
            return True
    return False


def _body_fields(schema: dict, required: list, resolver: _Resolver, warnings: list[str],
                 where: str) -> list[ParameterSpec]:
    fields: list[ParameterSpec] = []
    props = schema.get("properties") or {}
    for name, prop in props.items():
        prop = resolver.deref(prop)
        if not isinstance(prop, dict):
            continue
        kind = _schema_type(prop, warnings, where)
        fields.append(ParameterSpec(
            name=str(name),
            location="body-field",
            schema_type=kind,
            required=name in required,
            description=_describe(prop),
            example=prop.get("example"),
        ))
        if kind == "object":
            # one level of nesting becomes dotted rows; deeper levels stay in the schema dump
            inner_required = prop.get("required") or []
            for sub, subprop in (prop.get("properties") or {}).items():
                subprop = resolver.deref(subprop)
                if not isinstance(subprop, dict):
                    continue
                fields.append(ParameterSpec(
                    name=f"{name}.{sub}",
                    location="body-field",
                    schema_type=_schema_type(subprop, warnings, where),
                    required=sub in inner_required,
                    description=_describe(subprop),
                    example=subprop.get("example"),
                ))
    return fields


def _parse_operation(path: str, method: str, op: dict, shared_params: list, resolver: _Resolver,
                     warnings: list[str]) -> ApiOperation:
    where = f"{method} {path}"
    merged: dict[tuple[str, str], dict] = {}
    for raw in list(shared_params) + list(op.get("parameters") or []):
        param = resolver.deref(raw)
        if not isinstance(param, dict) or "name" not in param:
            warnings.append(f"{where}: skipped malformed parameter")
            continue
        merged[(param["name"], param.get("in", ""))] = param

    params: list[ParameterSpec] = []
    for (name, loc), param in merged.items():
        if loc not in ("path", "query", "header"):
            warnings.append(f"{where}: parameter {name!r} in {loc!r} not supported")
            continue
        schema = resolver.deref(param.get("schema") or {})
        params.append(ParameterSpec(
            name=str(name),
            location=loc,
            schema_type=_schema_type(schema, warnings, where),
            required=bool(param.get("required", False)),
            description=_describe(param, schema),
            example=_example(param, schema),
        ))

    declared = {p.name for p in params if p.location == "path"}
    for var in _PATH_VAR.findall(path):
        if var not in declared:
            warnings.append(f"{where}: path variable {var!r} undocumented, assumed string")
            params.append(ParameterSpec(name=var, location="path", schema_type="string",
                                        required=True))
    variables = set(_PATH_VAR.findall(path))
    for p in [p for p in params if p.location == "path" and p.name not in variables]:
        warnings.append(f"{where}: path parameter {p.name!r} not in template, dropped")
        params.remove(p)

    body_schema = None
    body_present = False
    body = resolver.deref(op.get("requestBody")) if op.get("requestBody") else None
    if isinstance(body, dict):
        body_present = True
        content = body.get("content") or {}
        media = next((content[m] for m in content if "json" in m), None)
        if media is None and content:
            warnings.append(f"{where}: non-JSON request body ({', '.join(content)}) not expanded")
        if isinstance(media, dict) and media.get("schema") is not None:
            schema = resolver.deref(media["schema"])
            body_schema = resolver.deep(schema)
            if isinstance(schema, dict) and _schema_type(schema, warnings, where) == "object":
                params.extend(_body_fields(schema, schema.get("required") or [], resolver,
                                           warnings, where))

    responses = []
    for code, resp in (op.get("responses") or {}).items():
        resp = resolver.deref(resp)
        text = resp.get("description", "") if isinstance(resp, dict) else ""
        responses.append((str(code), str(text)))

    op_id = op.get("operationId") or where
    return ApiOperation(
        id=str(op_id),
        method=method,
        path=path,
        summary=str(op.get("summary", "") or ""),
        description=str(op.get("description", "") or ""),
        parameters=tuple(params),
        request_body_present=body_present,
        request_body_schema=body_schema,
        response_specs=tuple(responses),
    )


def parse_spec(document: str, format_hint: str = "auto") -> ApiCatalog:
    """Parse an OpenAPI 3.x document into an :class:`ApiCatalog`.

    Raises MalformedDocument when the text is not JSON/YAML (or not a mapping)
    and EmptySpec when no operation survives parsing.
    """
    data = _load(document, format_hint)
    if not isinstance(data, dict):
        raise MalformedDocument("document is not a mapping")

    warnings: list[str] = []
    version = str(data.get("openapi", ""))
    if version and not version.startswith("3"):
        warnings.append(f"openapi version {version} is outside the supported 3.x subset")
    resolver = _Resolver(data, warnings)

    info = data.get("info") or {}
    title = str(info.get("title", "")) if isinstance(info, dict) else ""
    base_path = ""
    servers = data.get("servers") or []
    if servers and isinstance(servers[0], dict):
        base_path = urlparse(str(servers[0].get("url", ""))).path.rstrip("/")

    operations: list[ApiOperation] = []
    seen_ids: set[str] = set()
    paths = data.get("paths") or {}
    if not isinstance(paths, dict):
        paths = {}
    for path, item in paths.items():
        item = resolver.deref(item)
        if not isinstance(item, dict):
            warnings.append(f"{path}: path item is not a mapping")
            continue
        shared = item.get("parameters") or []
        for method_name, op in item.items():
            if method_name in ("parameters", "summary", "description", "servers"):
                continue
            method = method_name.upper()
            if method not in METHODS:
                warnings.append(f"{method} {path}: method not supported")
                continue
            if not isinstance(op, dict):
                warnings.append(f"{method} {path}: operation is not a mapping")
                continue
            try:
                parsed = _parse_operation(str(path), method, op, shared, resolver, warnings)
            except (ValueError, TypeError, AttributeError) as exc:
                warnings.append(f"{method} {path}: skipped ({exc})")
                continue
            if parsed.id in seen_ids:
                warnings.append(f"duplicate operationId {parsed.id!r}; using {parsed.key!r}")
                parsed = replace(parsed, id=parsed.key)
            seen_ids.add(parsed.id)
            operations.append(parsed)

    if not operations:
        raise EmptySpec("no operations found in document")
    for w in warnings:
        log.warning("openapi: %s", w)
    return ApiCatalog(title=title, base_path=base_path, operations=operations, warnings=warnings)


def load_spec(path: str) -> ApiCatalog:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    hint = "json" if path.endswith(".json") else "yaml" if path.endswith((".yaml", ".yml")) else "auto"
    return parse_spec(text, hint)


def _cell(text: Any) -> str:
    return str(text).replace("|", "\\|").replace("\n", " ").strip()


def render_markdown(op: ApiOperation) -> str:
    lines = [f"## {op.method} {op.path}", ""]
    if op.summary:
        lines += [op.summary, ""]
    if op.description:
        lines += [op.description, ""]
    if op.parameters:
        lines += [
            "Parameters:",
            "",
            "| name | location | type | required | description |",
            "| --- | --- | --- | --- | --- |",
        ]
        for p in op.parameters:
            desc = p.description
            if p.example is not None:
                desc = f"{desc} (example: {json.dumps(p.example, sort_keys=True)})".strip()
            lines.append(f"| {_cell(p.name)} | {p.location} | {p.schema_type} | "
                         f"{'yes' if p.required else 'no'} | {_cell(desc)} |")
    else:
        lines.append("Parameters: none")
    lines.append("")
    if op.request_body_present:
        lines.append("Request body: JSON")
        if op.request_body_schema is not None and _needs_schema_dump(op.request_body_schema):
            lines += ["", "```json", json.dumps(op.request_body_schema, indent=2, sort_keys=True),
                      "```"]
    else:
        lines.append("Request body: none")
    lines.append("")
    if op.response_specs:
        lines.append("Responses:")
        lines.append("")
        for code, text in op.response_specs:
            lines.append(f"- {code}: {text}".rstrip())
    else:
        lines.append("Responses: undocumented")
    return "\n".join(lines) + "\n"


def description_text(op: ApiOperation) -> str:
    """Canonical free text for an operation, used for embeddings and BM25 queries."""
    parts = [op.summary, op.description]
    for p in op.parameters:
        parts.append(p.name)
        parts.append(p.description)
    return " ".join(s.strip() for s in parts if s and s.strip())
