import json
import logging
import os
from typing import Dict, List, Optional, Union

from refract.config import MODEL_DIR
from refract.errors import ModelConfigError
from refract.levy_model import RefractedModel

logger = logging.getLogger(__name__)


def load_json(path: str):
    """Read a UTF-8 JSON document; syntax errors keep their line and column."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ModelConfigError(f"file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ModelConfigError(f"malformed JSON in {path}: {e.msg}", line=e.lineno, column=e.colno) from e


def load_model(path: str) -> RefractedModel:
    """Load a model document; bare file names also resolve against model/."""
    if not os.path.exists(path) and os.path.exists(os.path.join(MODEL_DIR, path)):
        path = os.path.join(MODEL_DIR, path)
    model = RefractedModel.from_document(load_json(path))
    logger.info("Loaded model %s: %s", path, model.to_document())
    return model


class FixtureManager:
    """
    Named refracted models kept in one JSON document.

    The document is either {"fixtures": {id: entry}, ...} (a validation
    config) or a bare {id: entry} mapping. An entry is a model document or
    the name of a model file, resolved against the document's directory and
    then against model/.
    """

    def __init__(self, data_file: str):
        self.data_file = data_file
        if not os.path.exists(self.data_file):
            possible_path = os.path.join(MODEL_DIR, os.path.basename(data_file))
            if os.path.exists(possible_path):
                self.data_file = possible_path
        self._cache: Dict[str, RefractedModel] = {}

    def _document(self) -> dict:
        if not os.path.exists(self.data_file):
            return {}
        doc = load_json(self.data_file)
        if not isinstance(doc, dict):
            raise ModelConfigError(f"{self.data_file} must hold a JSON object")
        return doc

    def _entries(self) -> Dict[str, Union[str, dict]]:
        doc = self._document()
        entries = doc.get("fixtures", doc if "cases" not in doc else {})
        if not isinstance(entries, dict):
            raise ModelConfigError("'fixtures' must map ids to model documents or file names")
        return entries

    def resolve(self, entry: Union[str, dict]) -> RefractedModel:
        if isinstance(entry, dict):
            return RefractedModel.from_document(entry)
        base_dir = os.path.dirname(os.path.abspath(self.data_file))
        for candidate in (os.path.join(base_dir, entry), os.path.join(MODEL_DIR, entry)):
            if os.path.exists(candidate):
                return load_model(candidate)
        raise ModelConfigError(f"fixture file {entry!r} not found next to {self.data_file} or in {MODEL_DIR}")

    def get_ids(self) -> List[str]:
        return sorted(self._entries())

    def get_fixture_by_id(self, fixture_id: str) -> Optional[RefractedModel]:
        if fixture_id in self._cache:
            return self._cache[fixture_id]
        entry = self._entries().get(fixture_id)
        if entry is None:
            return None
        model = self.resolve(entry)
        self._cache[fixture_id] = model
        return model

    def get_all_fixtures(self) -> Dict[str, RefractedModel]:
        return {fixture_id: self.get_fixture_by_id(fixture_id) for fixture_id in self.get_ids()}

    def add_fixture(self, fixture_id: str, model: RefractedModel) -> str:
        """Store `model` under `fixture_id`, replacing any previous entry."""
        doc = self._document()
        if "fixtures" in doc or "cases" in doc:
            doc.setdefault("fixtures", {})[fixture_id] = model.to_document()
        else:
            doc[fixture_id] = model.to_document()
        self.save_document(doc)
        self._cache[fixture_id] = model
        logger.info("Stored fixture %s in %s", fixture_id, self.data_file)
        return fixture_id

    def save_document(self, doc: dict) -> None:
        try:
            with open(self.data_file, "w", encoding="utf-8") as f:
                json.dump(doc, f, ensure_ascii=False, indent=4)
        except OSError as e:
            raise ModelConfigError(f"failed to save {self.data_file}: {e}") from e
