import pandas as pd
from rest_framework import serializers
from rest_framework.renderers import JSONRenderer

from analysis.serializers import VerifySummarySerializer


class TableRowSerializer(serializers.Serializer):
    ns = serializers.IntegerField()
    precond = serializers.CharField()
    iterations = serializers.IntegerField()
    rate = serializers.FloatField(allow_null=True)
    time_s = serializers.FloatField()


def render_table(table):
    # NaN rates (pandas' missing value) become null
    records = [
        {key: (None if pd.isna(value) else value) for key, value in row.items()}
        for row in table.to_dict(orient="records")
    ]
    return JSONRenderer().render(TableRowSerializer(records, many=True).data)


def render_summary(summary):
    return JSONRenderer().render(VerifySummarySerializer(summary).data)
