# apps/conditioning/services.py
import pandas as pd

from apps.conditioning.embeddings import build_conditioning_vector
from apps.conditioning.schema import GROUP_ORDER
from apps.core.reporting import write_csv_report


class ConditioningService:
    """Service for inspecting conditioning vectors"""

    @staticmethod
    def vector_frame(ds, tables, mask=None):
        """
        Conditioning vectors of every record in a dataset

        Returns:
            DataFrame with patient_id, fold, class_name and one column per
            vector entry named ``<group>_<i>``
        """
        dim = tables.schema.embedding_dim
        columns = [f'{group}_{i}' for group in GROUP_ORDER for i in range(dim)]
        rows = []
        for record in ds:
            vector = build_conditioning_vector(record.meta, tables, mask)
            rows.append([record.meta.patient_id, record.fold, record.meta.class_name, *vector])
        return pd.DataFrame(rows, columns=['patient_id', 'fold', 'class_name', *columns])

    @staticmethod
    def export_vectors(ds, tables, path, mask=None, prov=None):
        frame = ConditioningService.vector_frame(ds, tables, mask)
        return write_csv_report(frame, path, prov)
