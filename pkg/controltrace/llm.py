# Licensed under a 3-clause BSD style license - see LICENSE.rst
"""
===
llm
===

Prompting a large language model for ATT&CK techniques.  The model sees the
CVE description and the full parent-technique catalog, optionally with
technique suggestions derived from the CVE's CWE ids, and answers with a
JSON array of up to five technique ids.

Transport is either file based (prompts are written to
``<root>/prompts/<cve_id>.txt`` and answers read from
``<root>/responses/<cve_id>.txt``) or an OpenAI-style chat-completion
endpoint whose base URL comes from the environment variable named by
``conf.llm_url_env``.
"""
import json
import os
from dataclasses import dataclass

import requests
from astropy import log

from . import conf
from .knowledge import BadTechniqueId, collapse_to_parent
from .mapping import TechniquePrediction
from .retrieval import RankedList

__all__ = ['LlmPrompt', 'build_llm_prompt', 'parse_llm_response',
           'PromptDirectory', 'ChatCompletionClient', 'LlmMapper',
           'EmptyCatalog', 'NoParsableArray', 'LlmTransportError']


class EmptyCatalog(ValueError):
    pass


class NoParsableArray(ValueError):
    pass


class LlmTransportError(RuntimeError):
    pass


INSTRUCTION = ("You are a cyber threat intelligence analyst. Map the vulnerability "
               "below to the MITRE ATT&CK parent techniques an adversary would most "
               "likely use when exploiting it.")
HINT_HEADER = ("Technique suggestions derived from the weakness classification "
               "(CWE -> CAPEC -> ATT&CK):")
OUTPUT_FORMAT = ("Answer with a JSON array of at most {0} technique ids from the list "
                 "above, most likely first, e.g. [\"Txxxx\", \"Tyyyy\"]. "
                 "Do not add any other text.")


@dataclass(frozen=True)
class LlmPrompt:
    cve_id: str
    body: str
    hint_techniques: tuple = ()


def build_llm_prompt(cve, catalog, hints=()):
    """
    Render the prompt for one CVE.

    Parameters
    ----------
    cve : `~controltrace.vulnstore.CveRecord`
    catalog : list of `~controltrace.knowledge.Technique`
        Parent techniques; rendered as ``id: name`` lines in id order.
    hints : list of str
        Suggested technique ids.  No hint block is rendered when empty.

    Raises
    ------
    EmptyCatalog
    """
    if not catalog:
        raise EmptyCatalog("the technique catalog is empty")
    sub_techniques = [t.id for t in catalog if not t.is_parent]
    if sub_techniques:
        raise ValueError("prompt catalog must hold parent techniques only, got "
                         + ', '.join(sub_techniques))
    sections = [INSTRUCTION,
                "Vulnerability: {0}\nDescription: {1}".format(cve.id, cve.description.strip()),
                "ATT&CK parent techniques:\n" + '\n'.join(
                    "{0}: {1}".format(t.id, t.name) for t in sorted(catalog, key=lambda t: t.id))]
    hints = tuple(sorted(set(hints)))
    if hints:
        sections.append(HINT_HEADER + '\n' + ', '.join(hints))
    sections.append(OUTPUT_FORMAT.format(conf.llm_max_predictions))
    return LlmPrompt(cve.id, '\n\n'.join(sections) + '\n', hints)


def _first_array(text):
    decoder = json.JSONDecoder()
    start = text.find('[')
    while start != -1:
        try:
            value, _ = decoder.raw_decode(text, start)
        except ValueError:
            value = None
        if isinstance(value, list):
            return value
        start = text.find('[', start + 1)
    raise NoParsableArray("no JSON array in response: {0!r}".format(text[:80]))


def parse_llm_response(text, catalog, limit=None):
    """
    Technique ids from a model answer.

    The first JSON array is taken, wherever it sits in the text (prose and
    code fences are tolerated).  Sub-techniques collapse to their parent,
    ids outside ``catalog`` are dropped, repeats keep their first position
    and at most ``limit`` ids (``conf.llm_max_predictions``) remain.

    Raises
    ------
    NoParsableArray
    """
    if limit is None:
        limit = conf.llm_max_predictions
    catalog = set(catalog)
    parsed = []
    for item in _first_array(text or ''):
        if not isinstance(item, str):
            continue
        try:
            technique_id = collapse_to_parent(item.strip().upper())
        except BadTechniqueId:
            continue
        if technique_id in catalog and technique_id not in parsed:
            parsed.append(technique_id)
    return parsed[:limit]


class PromptDirectory:
    """File transport: ``prompts/`` and ``responses/`` under one root."""

    def __init__(self, root):
        self.root = root
        self.prompts = os.path.join(root, 'prompts')
        self.responses = os.path.join(root, 'responses')

    def write_prompt(self, prompt):
        os.makedirs(self.prompts, exist_ok=True)
        path = os.path.join(self.prompts, prompt.cve_id + '.txt')
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write(prompt.body)
        return path

    def write_response(self, cve_id, text):
        os.makedirs(self.responses, exist_ok=True)
        with open(os.path.join(self.responses, cve_id + '.txt'), 'w', encoding='utf-8') as handle:
            handle.write(text)

    def read_response(self, cve_id):
        """The stored answer for a CVE, or None when there is none yet."""
        path = os.path.join(self.responses, cve_id + '.txt')
        if not os.path.exists(path):
            return None
        with open(path, encoding='utf-8') as handle:
            return handle.read()


class ChatCompletionClient:
    """
    Minimal chat-completion client.

    Posts ``{model, messages}`` to ``<base url>/chat/completions`` and returns
    the first choice's message content.
    """

    def __init__(self, model, url=None, timeout=None, session=None):
        if url is None:
            url = os.environ.get(conf.llm_url_env)
        if not url:
            raise LlmTransportError("no LLM endpoint: set {0}".format(conf.llm_url_env))
        self.model = model
        self.url = url.rstrip('/') + '/chat/completions'
        self.timeout = conf.llm_timeout if timeout is None else timeout
        self.session = session or requests.Session()

    def complete(self, body):
        payload = {'model': self.model, 'temperature': 0,
                   'messages': [{'role': 'user', 'content': body}]}
        try:
            response = self.session.post(self.url, json=payload, timeout=self.timeout)
            response.raise_for_status()
            return response.json()['choices'][0]['message']['content']
        except requests.RequestException as exc:
            raise LlmTransportError("request to {0} failed: {1}".format(self.url, exc))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise LlmTransportError("unexpected answer from {0}: {1}".format(self.url, exc))


class LlmMapper:
    """
    Stage 3 through a language model.

    Answers come from ``client`` when one is given (and are then cached in
    ``directory``), otherwise from response files in ``directory``.  Each
    parsed id gets score ``1 / rank``.
    """

    def __init__(self, kb, model, directory=None, client=None, hints=False):
        if directory is None and client is None:
            raise ValueError("LlmMapper needs a prompt directory or a client")
        self.kb = kb
        self.model = model
        self.directory = directory
        self.client = client
        self.hints = hints
        self._catalog = kb.parent_techniques()
        self._catalog_ids = {t.id for t in self._catalog}

    @property
    def method(self):
        return 'llm:{0}'.format(self.model)

    def prompt_for(self, cve):
        hints = self.kb.derive_hint_techniques(cve.cwe_ids) if self.hints else ()
        return build_llm_prompt(cve, self._catalog, hints)

    def write_prompts(self, cves):
        paths = []
        for cve in cves:
            if not cve.usable:
                log.warning("No prompt for {0}: empty description".format(cve.id))
                continue
            paths.append(self.directory.write_prompt(self.prompt_for(cve)))
        return paths

    def predict(self, cve):
        """
        Returns
        -------
        prediction : `~controltrace.mapping.TechniquePrediction` or None
            None when file mode has no response for the CVE yet.
        """
        if self.client is not None:
            text = self.client.complete(self.prompt_for(cve).body)
            if self.directory is not None:
                self.directory.write_response(cve.id, text)
        else:
            text = self.directory.read_response(cve.id)
            if text is None:
                return None
        ids = parse_llm_response(text, self._catalog_ids)
        scores = {technique_id: 1.0 / rank for rank, technique_id in enumerate(ids, 1)}
        return TechniquePrediction(cve.id, RankedList.from_scores(cve.id, scores), self.method)

    def predict_all(self, cves):
        predictions = {}
        for cve in cves:
            try:
                prediction = self.predict(cve)
            except NoParsableArray as exc:
                log.warning("{0}: {1}".format(cve.id, exc))
                continue
            if prediction is None:
                log.warning("No response for {0}".format(cve.id))
                continue
            predictions[cve.id] = prediction
        return predictions
